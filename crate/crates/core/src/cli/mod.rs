//! Command-line runner: configuration, experiment subcommands, checkpoints
//! and CSV output.

pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corrector::{center, ou_generator_apply, poisson_solve, QuadraticFunctional};
use crate::integrators::{
    continue_trajectory, run_trajectory, step_count, EddyIntegrator, Integrator, LimitIntegrator, Observable,
    SlowFastIntegrator, SlowFastParams, Trajectory,
};
use crate::limit::{EddyOperator, LimitCoefficients};
use crate::operators::{invariant_covariance, sample_invariant};
use crate::ou::OuParams;
use crate::spectral::{nonlinear_b, ModeBasis, SpectralField};
use crate::stats::{collect_runs, compare_laws, mean_se, replica_seed, EnsembleResult};
use crate::{Error, Result};

pub use config::ExperimentConfig;
use io::{Csv, OutputDir, ReplicaSnapshot};

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Slow-fast stochastic fluid laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Replica count; overrides `run.replicas`.
    #[arg(long, global = true, value_name = "M")]
    pub replicas: Option<usize>,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long, global = true, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Stop once the checkpoint at `outputs.checkpoint_step` is written.
    #[arg(long, global = true)]
    pub halt_at_checkpoint: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Ensemble of the coupled slow-fast system.
    SimulateSlowfast,
    /// Ensemble of the transport-noise limit equation.
    SimulateLimit,
    /// Deterministic eddy-viscosity runs over `run.shell_sweep`.
    SimulateEddy,
    /// The Itô-Stokes drift, optionally checked by Monte Carlo.
    ComputeDrift,
    /// Both corrector representations applied to `u0` and their difference.
    ComputeCorrector,
    /// Poisson residual suite on random centered quadratic functionals.
    PoissonCheck,
    /// Slow-fast ensembles over `run.epsilons` compared with one limit ensemble.
    EpsilonSweep,
    /// Ratio of the eddy operator to the Laplacian on the lowest modes.
    EddyRatio,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SimulateSlowfast => "simulate-slowfast",
            Command::SimulateLimit => "simulate-limit",
            Command::SimulateEddy => "simulate-eddy",
            Command::ComputeDrift => "compute-drift",
            Command::ComputeCorrector => "compute-corrector",
            Command::PoissonCheck => "poisson-check",
            Command::EpsilonSweep => "epsilon-sweep",
            Command::EddyRatio => "eddy-ratio",
        }
    }
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    CheckFailed(String),
    Halted(usize),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(Status::Ok) => EXIT_OK,
        Ok(Status::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Ok(Status::Halted(step)) => {
            println!("halted at checkpoint step {step}; continue with --resume");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.run.seed = Some(s);
    }
    if let Some(m) = common.replicas {
        cfg.run.replicas = m;
    }
    if let Some(d) = &common.out {
        cfg.outputs.dir = d.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Status> {
    let cfg = load_config(&cli.common)?;
    let fp = cfg.fingerprint();
    let mut out = OutputDir::create(&PathBuf::from(&cfg.outputs.dir), &fp, cli.command.name())?;
    let ctx = Context { cfg: &cfg, common: &cli.common };
    let result = match cli.command {
        Command::SimulateSlowfast => ctx.simulate(&mut out, false),
        Command::SimulateLimit => ctx.simulate(&mut out, true),
        Command::SimulateEddy => ctx.simulate_eddy(&mut out),
        Command::ComputeDrift => ctx.compute_drift(&mut out),
        Command::ComputeCorrector => ctx.compute_corrector(&mut out),
        Command::PoissonCheck => ctx.poisson_check(&mut out),
        Command::EpsilonSweep => ctx.epsilon_sweep(&mut out),
        Command::EddyRatio => ctx.eddy_ratio(&mut out),
    };
    match &result {
        Ok(Status::Ok) => out.write_manifest("complete", None)?,
        Ok(Status::CheckFailed(msg)) => out.write_manifest("complete", Some(&format!("check failed: {msg}")))?,
        Ok(Status::Halted(step)) => out.write_manifest("incomplete", Some(&format!("halted at checkpoint step {step}")))?,
        Err(e) => out.write_manifest("incomplete", Some(&e.to_string()))?,
    }
    result
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    common: &'a CommonArgs,
}

/// Records up to and including `step` under the recording rule of
/// `continue_trajectory` for a run longer than `step`.
fn records_through(step: usize, stride: usize) -> usize {
    step / stride + 1
}

impl Context<'_> {
    fn slowfast_integrator(&self, b: &Arc<ModeBasis>, eps: f64) -> Result<Integrator> {
        let cfg = self.cfg;
        let a = cfg.operator_a(b)?;
        let ou = OuParams::new(eps, cfg.operator_c(b)?, a, cfg.noise(b)?)?;
        let u0 = cfg.u0(b)?;
        let y0 = u0.scale(cfg.run.y0_scale);
        let mut p = SlowFastParams::new(ou, cfg.slowfast_dt(eps), cfg.run.horizon, u0, y0)?;
        p.nonlinear = cfg.run.nonlinear;
        p.blowup_cap = cfg.run.blowup_cap;
        Ok(Integrator::SlowFast(SlowFastIntegrator::new(p)?))
    }

    fn limit_integrator(&self, b: &Arc<ModeBasis>) -> Result<Integrator> {
        let cfg = self.cfg;
        let coeffs = Arc::new(LimitCoefficients::new(&cfg.operator_c(b)?, &cfg.noise(b)?)?);
        let mut li = LimitIntegrator::new(coeffs, &cfg.operator_a(b)?, cfg.limit_dt(), cfg.u0(b)?)?;
        li.nonlinear = cfg.run.nonlinear;
        li.blowup_cap = cfg.run.blowup_cap;
        Ok(Integrator::Limit(li))
    }

    /// Runs every replica, from scratch or from a checkpoint, writing a
    /// checkpoint when one is configured. `None` means the run halted at
    /// the checkpoint.
    fn ensemble(
        &self,
        integ: &Integrator,
        obs: &[Observable],
        seed: u64,
        mut out: Option<&mut OutputDir>,
    ) -> Result<Option<EnsembleResult>> {
        let cfg = self.cfg;
        let (n, warn) = step_count(cfg.run.horizon, integ.dt());
        if let Some(w) = warn {
            eprintln!("warning: {w}");
        }
        let stride = cfg.outputs.stride;
        let cp = cfg.outputs.checkpoint_step;
        if let Some(c) = cp {
            if c == 0 || c >= n {
                return Err(Error::Config(format!("outputs.checkpoint_step must be in 1..{n}, got {c}")));
            }
        }
        let halt = self.common.halt_at_checkpoint;
        if halt && cp.is_none() {
            return Err(Error::Config("--halt-at-checkpoint needs outputs.checkpoint_step".into()));
        }
        let fp = cfg.fingerprint();
        let m = cfg.run.replicas;
        let seeds: Vec<u64> = (0..m).map(|i| replica_seed(seed, i)).collect();

        let resumed = match &self.common.resume {
            Some(dir) => {
                let (man, reps) = io::read_checkpoint(dir, integ.initial_state().u.basis())?;
                if man.fingerprint != fp {
                    return Err(Error::Config(format!(
                        "checkpoint fingerprint {} does not match the configuration {fp}",
                        man.fingerprint
                    )));
                }
                if man.kind != integ.kind() || reps.len() != m {
                    return Err(Error::Config(format!(
                        "checkpoint holds {} {} replicas, the run needs {m} {}",
                        reps.len(),
                        man.kind,
                        integ.kind()
                    )));
                }
                Some(reps)
            }
            None => None,
        };

        type Run = Result<(Trajectory, Option<ReplicaSnapshot>)>;
        let runs: Vec<Run> = match resumed {
            Some(reps) => reps
                .into_par_iter()
                .map(|r| {
                    let mut rng = r.rng;
                    let skip_first = r.state.step % stride == 0;
                    let mut t = continue_trajectory(integ, r.state, obs, n, stride, &mut rng, |_, _| Ok(()))?;
                    let skip = usize::from(skip_first);
                    let mut times = r.times;
                    times.extend_from_slice(&t.times[skip..]);
                    t.times = times;
                    for (v, old) in t.values.iter_mut().zip(r.values) {
                        let mut merged = old;
                        merged.extend_from_slice(&v[skip..]);
                        *v = merged;
                    }
                    Ok((t, None))
                })
                .collect(),
            None => seeds
                .par_iter()
                .map(|&s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    let mut captured = None;
                    let total = if halt { cp.expect("checked") } else { n };
                    let t = continue_trajectory(integ, integ.initial_state(), obs, total, stride, &mut rng, |st, r| {
                        if Some(st.step) == cp {
                            captured = Some((st.clone(), r.clone()));
                        }
                        Ok(())
                    })?;
                    let snap = captured.map(|(state, rng)| {
                        let k = records_through(state.step, stride);
                        ReplicaSnapshot {
                            state,
                            rng,
                            times: t.times[..k].to_vec(),
                            values: t.values.iter().map(|v| v[..k].to_vec()).collect(),
                        }
                    });
                    Ok((t, snap))
                })
                .collect(),
        };

        let mut snaps = Vec::new();
        let mut trajs = Vec::with_capacity(runs.len());
        for r in runs {
            match r {
                Ok((t, s)) => {
                    snaps.extend(s);
                    trajs.push(Ok(t));
                }
                Err(e) => trajs.push(Err(e)),
            }
        }
        if let (true, Some(out)) = (trajs.iter().any(|t| t.is_err()), out.as_deref_mut()) {
            let mut csv = Csv::new(&fp, "replica,t,observable,value");
            for (rep, t) in trajs.iter().enumerate() {
                let Ok(t) = t else { continue };
                for (r, time) in t.times.iter().enumerate() {
                    for (o, name) in cfg.outputs.observables.iter().enumerate() {
                        csv.row(&[rep.to_string(), time.to_string(), name.clone(), t.values[o][r].to_string()]);
                    }
                }
            }
            csv.write(&out.path("stats_partial.csv"))?;
        }
        if let (Some(step), Some(out)) = (cp, out) {
            if snaps.len() == m {
                io::write_checkpoint(&out.path("checkpoint"), &fp, integ.kind(), step, &snaps)?;
            }
            if halt {
                return if snaps.len() == m { Ok(None) } else { collect_runs(integ.kind(), obs, trajs, seeds, &fp).map(|_| None) };
            }
        }
        let mut res = collect_runs(integ.kind(), obs, trajs, seeds, &fp)?;
        res.observables = cfg.outputs.observables.clone();
        Ok(Some(res))
    }

    fn simulate(&self, out: &mut OutputDir, limit: bool) -> Result<Status> {
        let b = self.cfg.basis()?;
        let integ = if limit { self.limit_integrator(&b)? } else { self.slowfast_integrator(&b, self.cfg.run.epsilon)? };
        let obs = self.cfg.observables(&b)?;
        let Some(res) = self.ensemble(&integ, &obs, self.cfg.seed(), Some(out))? else {
            return Ok(Status::Halted(self.cfg.outputs.checkpoint_step.unwrap_or_default()));
        };
        write_ensemble(out, &res)?;
        for (o, name) in res.observables.iter().enumerate() {
            let (mean, se) = mean_se(&res.last(o));
            println!("{name} at t = {}: {mean} ± {se}", res.times[res.times.len() - 1]);
        }
        Ok(Status::Ok)
    }

    fn simulate_eddy(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        let b = cfg.basis()?;
        let (a, c, u0) = (cfg.operator_a(&b)?, cfg.operator_c(&b)?, cfg.u0(&b)?);
        let obs = cfg.observables(&b)?;
        let names = &cfg.outputs.observables;
        let mut csv = Csv::new(out.fingerprint(), "n,t,observable,value");
        for n in shell_sizes(cfg) {
            let qn = cfg.shell_noise(&b, n)?;
            let mut integ = EddyIntegrator::from_covariance(&qn, &c, &a, cfg.limit_dt(), u0.clone())?;
            integ.nonlinear = cfg.run.nonlinear;
            integ.blowup_cap = cfg.run.blowup_cap;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
            let t = run_trajectory(&Integrator::Eddy(integ), &obs, cfg.run.horizon, cfg.outputs.stride, &mut rng)?;
            for (r, time) in t.times.iter().enumerate() {
                for (o, name) in names.iter().enumerate() {
                    csv.row(&[n.to_string(), time.to_string(), name.clone(), t.values[o][r].to_string()]);
                }
            }
            io::write_snapshot(&out.path(&format!("final_u_n{n}.msf")), &t.final_state.u)?;
            println!("N = {n}: {} = {} at t = {}", names[0], t.values[0][t.times.len() - 1], t.times[t.times.len() - 1]);
        }
        csv.write(&out.path("eddy.csv"))?;
        Ok(Status::Ok)
    }

    fn compute_drift(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        let b = cfg.basis()?;
        let c = cfg.operator_c(&b)?;
        let coeffs = LimitCoefficients::new(&c, &cfg.noise(&b)?)?;
        let r = coeffs.drift();
        let samples = cfg.run.mc_samples;
        let mc = (samples >= 2).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
            let mut sum = vec![0.0; b.dim()];
            let mut sum_sq = vec![0.0; b.dim()];
            for _ in 0..samples {
                let w = sample_invariant(coeffs.measure(), &mut rng);
                let s = nonlinear_b(&w, &w).map(|bw| c.neg_inverse_apply(&bw))?;
                for (m, v) in s.coeffs().iter().enumerate() {
                    sum[m] += v;
                    sum_sq[m] += v * v;
                }
            }
            let n = samples as f64;
            Ok::<_, Error>(
                sum.iter()
                    .zip(&sum_sq)
                    .map(|(s, q)| {
                        let mean = s / n;
                        (mean, ((q / n - mean * mean).max(0.0) / (n - 1.0)).sqrt())
                    })
                    .collect::<Vec<_>>(),
            )
        });
        let mc = mc.transpose()?;
        let mut csv = Csv::new(out.fingerprint(), "mode,kx,ky,parity,r,mc_mean,mc_se");
        for m in 0..b.dim() {
            let (mm, ms) = mc.as_ref().map(|v| (v[m].0.to_string(), v[m].1.to_string())).unwrap_or_default();
            csv.row(&[mode_columns(&b, m), vec![r.coeffs()[m].to_string(), mm, ms]].concat());
        }
        csv.write(&out.path("drift.csv"))?;
        if r.coeffs().iter().all(|v| *v == 0.0) {
            println!("r = 0 (every coefficient is exactly zero)");
        } else {
            println!("max |r| = {}", r.max_abs());
            for (m, v) in r.coeffs().iter().enumerate().filter(|(_, v)| **v != 0.0) {
                match &mc {
                    Some(mc) => println!("  {}: {v}  (Monte Carlo {} ± {})", b.label(m), mc[m].0, mc[m].1),
                    None => println!("  {}: {v}", b.label(m)),
                }
            }
        }
        Ok(Status::Ok)
    }

    fn compute_corrector(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        let b = cfg.basis()?;
        let coeffs = LimitCoefficients::new(&cfg.operator_c(&b)?, &cfg.noise(&b)?)?;
        let u = cfg.u0(&b)?;
        let (ra, rb) = (coeffs.corrector_a(&u), coeffs.corrector_b(&u));
        let mut csv = Csv::new(out.fingerprint(), "mode,kx,ky,parity,representation_a,representation_b,difference");
        for m in 0..b.dim() {
            let (x, y) = (ra.coeffs()[m], rb.coeffs()[m]);
            csv.row(&[mode_columns(&b, m), vec![x.to_string(), y.to_string(), (x - y).to_string()]].concat());
        }
        csv.write(&out.path("corrector.csv"))?;
        println!(
            "commuting: {} (commutator norm {:e}); max |A - B| = {:e}",
            coeffs.commutes(),
            coeffs.commute_residual(),
            ra.sub(&rb).max_abs()
        );
        Ok(Status::Ok)
    }

    fn poisson_check(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        let b = cfg.basis()?;
        let (c, q) = (cfg.operator_c(&b)?, cfg.noise(&b)?);
        let mu = invariant_covariance(&c, &q)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
        let n = b.dim();
        let mut csv = Csv::new(out.fingerprint(), "functional,max_residual");
        let mut worst: f64 = 0.0;
        for i in 0..cfg.run.poisson_functionals {
            let a1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let psi = center(&QuadraticFunctional::new(&b, 0.0, a1, (&m + m.transpose()) * 0.5)?, &mu);
            let phi = poisson_solve(&c, &q, &psi)?;
            let mut res: f64 = 0.0;
            for _ in 0..cfg.run.poisson_points {
                let y = SpectralField::new(b.clone(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                res = res.max((ou_generator_apply(&c, &q, &phi, &y)? + psi.eval(&y)).abs());
            }
            worst = worst.max(res);
            csv.row(&[i.to_string(), res.to_string()]);
        }
        csv.write(&out.path("poisson.csv"))?;
        println!("max Poisson residual {worst:e} (tolerance {:e})", cfg.run.poisson_tol);
        Ok(if worst <= cfg.run.poisson_tol {
            Status::Ok
        } else {
            Status::CheckFailed(format!("Poisson residual {worst:e} exceeds {:e}", cfg.run.poisson_tol))
        })
    }

    fn epsilon_sweep(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        if cfg.run.epsilons.is_empty() {
            return Err(Error::Config("epsilon-sweep needs run.epsilons".into()));
        }
        if self.common.resume.is_some() || cfg.outputs.checkpoint_step.is_some() {
            return Err(Error::Config("epsilon-sweep does not support checkpoints".into()));
        }
        let b = cfg.basis()?;
        let obs = cfg.observables(&b)?;
        if let Some(o) = obs.iter().find(|o| o.needs_fast()) {
            return Err(Error::Config(format!("observable {} has no limit counterpart", o.name(0))));
        }
        let halted = || Error::Config("epsilon-sweep cannot halt".into());
        let limit = self.ensemble(&self.limit_integrator(&b)?, &obs, cfg.seed().wrapping_add(1), None)?.ok_or_else(halted)?;
        let last = limit.times.len() - 1;
        let mut csv = Csv::new(out.fingerprint(), "epsilon,observable,mean_diff,var_diff,ks,se_mean,n");
        for &eps in &cfg.run.epsilons {
            let sf = self.ensemble(&self.slowfast_integrator(&b, eps)?, &obs, cfg.seed(), None)?.ok_or_else(halted)?;
            if sf.times.len() != limit.times.len() {
                return Err(Error::Config("slow-fast and limit runs record at different times".into()));
            }
            for name in &sf.observables {
                let cmp = compare_laws(&sf, &limit, name, last)?;
                println!("epsilon {eps}: {name} KS {:.4}, mean diff {:.3e} ± {:.3e}", cmp.ks, cmp.mean_diff, cmp.se_mean);
                csv.row(&[
                    eps.to_string(),
                    name.clone(),
                    cmp.mean_diff.to_string(),
                    cmp.var_diff.to_string(),
                    cmp.ks.to_string(),
                    cmp.se_mean.to_string(),
                    cmp.n_a.to_string(),
                ]);
            }
        }
        csv.write(&out.path("comparison.csv"))?;
        Ok(Status::Ok)
    }

    fn eddy_ratio(&self, out: &mut OutputDir) -> Result<Status> {
        let cfg = self.cfg;
        let b = cfg.basis()?;
        let c = cfg.operator_c(&b)?;
        let mut lows: Vec<usize> = (0..b.dim()).collect();
        lows.sort_by_key(|&m| (b.wavevector(m).norm_sq(), m));
        lows.truncate(8);
        let mut u = SpectralField::zeros(&b);
        for (i, &m) in lows.iter().enumerate() {
            u = u.axpy(1.0 + 0.25 * i as f64, &SpectralField::basis_element(&b, m));
        }
        let mut csv = Csv::new(out.fingerprint(), "n,mode,kx,ky,parity,ratio");
        for n in shell_sizes(cfg) {
            let kappa = EddyOperator::new(&cfg.shell_noise(&b, n)?, &c)?;
            let ku = kappa.apply_direct(&u);
            let ratios: Vec<f64> = lows
                .iter()
                .map(|&m| {
                    let lap = -4.0 * std::f64::consts::PI.powi(2) * b.wavevector(m).norm_sq() as f64;
                    ku.coeffs()[m] / (lap * u.coeffs()[m])
                })
                .collect();
            for (&m, r) in lows.iter().zip(&ratios) {
                csv.row(&[vec![n.to_string()], mode_columns(&b, m), vec![r.to_string()]].concat());
            }
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("N = {n}: ratio in [{lo:.6}, {hi:.6}], relative spread {:.4}", (hi - lo) / lo);
        }
        csv.write(&out.path("eddy_ratio.csv"))?;
        Ok(Status::Ok)
    }
}

fn mode_columns(b: &ModeBasis, m: usize) -> Vec<String> {
    let k = b.wavevector(m);
    vec![m.to_string(), k.kx.to_string(), k.ky.to_string(), b.parity(m).as_str().to_string()]
}

fn shell_sizes(cfg: &ExperimentConfig) -> Vec<usize> {
    if cfg.run.shell_sweep.is_empty() {
        vec![cfg.noise.shell_n]
    } else {
        cfg.run.shell_sweep.clone()
    }
}

fn write_ensemble(out: &mut OutputDir, res: &EnsembleResult) -> Result<()> {
    let fp = out.fingerprint().to_string();
    let mut stats = Csv::new(&fp, "replica,t,observable,value");
    for rep in 0..res.replicas() {
        for (r, t) in res.times.iter().enumerate() {
            for (o, name) in res.observables.iter().enumerate() {
                stats.row(&[rep.to_string(), t.to_string(), name.clone(), res.samples[o][rep][r].to_string()]);
            }
        }
    }
    stats.write(&out.path("stats.csv"))?;
    let mut traj = Csv::new(&fp, "t,observable,mean,se");
    for (r, t) in res.times.iter().enumerate() {
        for (o, name) in res.observables.iter().enumerate() {
            let (m, se) = mean_se(&res.at(o, r));
            traj.row(&[t.to_string(), name.clone(), m.to_string(), se.to_string()]);
        }
    }
    traj.write(&out.path("trajectory.csv"))?;
    Ok(())
}
