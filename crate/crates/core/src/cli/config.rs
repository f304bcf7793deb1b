//! Experiment configuration: a TOML file with the sections `basis`,
//! `operators`, `noise`, `run` and `outputs`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::integrators::Observable;
use crate::operators::{make_dissipation, make_qn, CovarianceSpec, DiagonalOperator, OperatorKind};
use crate::spectral::{ModeBasis, Parity, SpectralField, WaveVector};
use crate::{Error, Result};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub basis: BasisSection,
    pub operators: OperatorsSection,
    pub noise: NoiseSection,
    pub run: RunSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub k: usize,
}

/// `a_kind` / `c_kind` are `laplacian`, `friction` or `fractional`. The
/// coefficient is ν for the Laplacian and fractional kinds and χ for friction.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OperatorsSection {
    pub a_kind: String,
    pub a_coeff: f64,
    #[serde(default = "one")]
    pub a_gamma: f64,
    pub c_kind: String,
    pub c_coeff: f64,
    #[serde(default = "one")]
    pub c_gamma: f64,
}

/// `kind` is one of
/// - `band`: `amplitude` on every mode with `|k| ≤ kmax`;
/// - `diagonal`: one entry of `values` per basis mode;
/// - `dense`: `dense_modes` (`"kx,ky,cos"` labels) with the symmetric `dense_matrix`;
/// - `shell`: the isotropic shell covariance `Q_N` with `shell_n`, `shell_delta`, `shell_c`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: String,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub kmax: f64,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub dense_modes: Vec<String>,
    #[serde(default)]
    pub dense_matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub shell_n: usize,
    #[serde(default)]
    pub shell_delta: f64,
    #[serde(default = "one")]
    pub shell_c: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub epsilon: f64,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    pub dt: f64,
    /// When positive, slow-fast runs use `dt = epsilon * dt_per_epsilon`.
    #[serde(default)]
    pub dt_per_epsilon: f64,
    #[serde(default)]
    pub limit_dt: f64,
    pub horizon: f64,
    pub replicas: usize,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    #[serde(default = "default_cap")]
    pub blowup_cap: f64,
    /// Initial slow field as basis indices and coefficients.
    #[serde(default)]
    pub u0_indices: Vec<usize>,
    #[serde(default)]
    pub u0_values: Vec<f64>,
    /// The fast field starts at `y0_scale * u0`.
    #[serde(default)]
    pub y0_scale: f64,
    /// Shell sizes for `simulate-eddy` and `eddy-ratio`.
    #[serde(default)]
    pub shell_sweep: Vec<usize>,
    #[serde(default)]
    pub mc_samples: usize,
    #[serde(default = "hundred")]
    pub poisson_functionals: usize,
    #[serde(default = "hundred")]
    pub poisson_points: usize,
    #[serde(default = "poisson_tol")]
    pub poisson_tol: f64,
}

/// Observables are `energy`, `fast_energy`, `gap_norm`, `linearisation_gap`,
/// `dissipation`, `band_energy:L` and `pairing:M` (the basis element `M`).
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_observables")]
    pub observables: Vec<String>,
    #[serde(default = "one_usize")]
    pub stride: usize,
    /// Step at which replica states are written to `checkpoint/`.
    #[serde(default)]
    pub checkpoint_step: Option<usize>,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self { dir: default_dir(), observables: default_observables(), stride: 1, checkpoint_step: None }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn hundred() -> usize {
    100
}
fn poisson_tol() -> f64 {
    1e-10
}
fn default_cap() -> f64 {
    1e6
}
fn default_dir() -> String {
    "out".into()
}
fn default_observables() -> Vec<String> {
    vec!["energy".into()]
}

const MAX_CLI_TRUNCATION: usize = 64;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every precondition and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let r = &self.run;
        if self.basis.k == 0 || self.basis.k > MAX_CLI_TRUNCATION {
            errs.push(format!("basis.k must be in 1..={MAX_CLI_TRUNCATION}, got {}", self.basis.k));
        }
        for (name, kind, coeff, gamma) in [
            ("a", &self.operators.a_kind, self.operators.a_coeff, self.operators.a_gamma),
            ("c", &self.operators.c_kind, self.operators.c_coeff, self.operators.c_gamma),
        ] {
            if !["laplacian", "friction", "fractional"].contains(&kind.as_str()) {
                errs.push(format!("operators.{name}_kind must be laplacian, friction or fractional, got {kind:?}"));
            }
            if !(coeff > 0.0 && coeff.is_finite()) {
                errs.push(format!("operators.{name}_coeff must be positive, got {coeff}"));
            }
            if kind == "fractional" && !(gamma > 0.0 && gamma.is_finite()) {
                errs.push(format!("operators.{name}_gamma must be positive, got {gamma}"));
            }
        }
        let n = &self.noise;
        match n.kind.as_str() {
            "band" => {
                if !(n.amplitude >= 0.0 && n.amplitude.is_finite()) {
                    errs.push(format!("noise.amplitude must be nonnegative, got {}", n.amplitude));
                }
            }
            "diagonal" | "dense" => {}
            "shell" => {
                if n.shell_n == 0 {
                    errs.push("noise.shell_n must be positive".into());
                }
            }
            other => errs.push(format!("noise.kind must be band, diagonal, dense or shell, got {other:?}")),
        }
        if r.seed.is_none() {
            errs.push("run.seed is required (set it in the config or pass --seed)".into());
        }
        for (name, v) in [("run.epsilon", r.epsilon), ("run.dt", r.dt), ("run.horizon", r.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if r.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            errs.push(format!("run.epsilons must all be positive, got {:?}", r.epsilons));
        }
        if r.dt_per_epsilon < 0.0 || r.limit_dt < 0.0 {
            errs.push("run.dt_per_epsilon and run.limit_dt must be nonnegative".into());
        }
        if r.replicas < 2 {
            errs.push(format!("run.replicas must be at least 2, got {}", r.replicas));
        }
        if r.u0_indices.len() != r.u0_values.len() {
            errs.push(format!(
                "run.u0_indices ({}) and run.u0_values ({}) differ in length",
                r.u0_indices.len(),
                r.u0_values.len()
            ));
        }
        if self.outputs.stride == 0 {
            errs.push("outputs.stride must be positive".into());
        }
        for o in &self.outputs.observables {
            if let Err(e) = parse_observable_name(o) {
                errs.push(e);
            }
        }
        // checks that need the basis
        if errs.is_empty() {
            match ModeBasis::new(self.basis.k) {
                Ok(b) => {
                    if let Some(m) = r.u0_indices.iter().find(|&&m| m >= b.dim()) {
                        errs.push(format!("run.u0_indices entry {m} exceeds the basis dimension {}", b.dim()));
                    }
                    for o in &self.outputs.observables {
                        if let Some(m) = o.strip_prefix("pairing:").and_then(|s| s.parse::<usize>().ok()) {
                            if m >= b.dim() {
                                errs.push(format!("observable {o} exceeds the basis dimension {}", b.dim()));
                            }
                        }
                    }
                    if let Err(e) = self.operator_a(&b) {
                        errs.push(e.to_string());
                    }
                    if let Err(e) = self.operator_c(&b) {
                        errs.push(e.to_string());
                    }
                    if let Err(e) = self.noise(&b) {
                        errs.push(e.to_string());
                    }
                }
                Err(e) => errs.push(e.to_string()),
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or_default()
    }

    /// SHA-256 of the canonical TOML rendering, excluding the output
    /// directory and checkpoint placement, which do not change any result.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.outputs.dir = String::new();
        c.outputs.checkpoint_step = None;
        let canon = toml::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(canon.as_bytes())[..8])
    }

    pub fn basis(&self) -> Result<Arc<ModeBasis>> {
        ModeBasis::new(self.basis.k)
    }

    pub fn operator_a(&self, b: &Arc<ModeBasis>) -> Result<DiagonalOperator> {
        let o = &self.operators;
        make_dissipation(operator_kind(&o.a_kind, o.a_coeff, o.a_gamma)?, b)
    }

    pub fn operator_c(&self, b: &Arc<ModeBasis>) -> Result<DiagonalOperator> {
        let o = &self.operators;
        make_dissipation(operator_kind(&o.c_kind, o.c_coeff, o.c_gamma)?, b)
    }

    pub fn noise(&self, b: &Arc<ModeBasis>) -> Result<CovarianceSpec> {
        let n = &self.noise;
        match n.kind.as_str() {
            "band" => CovarianceSpec::diagonal(
                b,
                (0..b.dim()).map(|m| if b.wavevector(m).norm() <= n.kmax { n.amplitude } else { 0.0 }).collect(),
            ),
            "diagonal" => {
                if n.values.len() != b.dim() {
                    return Err(Error::Config(format!(
                        "noise.values has {} entries, the basis has {} modes",
                        n.values.len(),
                        b.dim()
                    )));
                }
                CovarianceSpec::diagonal(b, n.values.clone())
            }
            "dense" => {
                let modes = n.dense_modes.iter().map(|l| parse_mode_label(b, l)).collect::<Result<Vec<_>>>()?;
                let d = modes.len();
                if n.dense_matrix.len() != d || n.dense_matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::Config(format!("noise.dense_matrix must be {d}×{d}")));
                }
                let m = DMatrix::from_fn(d, d, |i, j| n.dense_matrix[i][j]);
                CovarianceSpec::dense(b, modes, m)
            }
            "shell" => self.shell_noise(b, n.shell_n),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }

    pub fn shell_noise(&self, b: &Arc<ModeBasis>, n: usize) -> Result<CovarianceSpec> {
        make_qn(n, self.noise.shell_delta, self.noise.shell_c, b)
    }

    pub fn u0(&self, b: &Arc<ModeBasis>) -> Result<SpectralField> {
        let mut c = vec![0.0; b.dim()];
        for (&m, &v) in self.run.u0_indices.iter().zip(&self.run.u0_values) {
            *c.get_mut(m).ok_or_else(|| Error::Config(format!("u0 index {m} out of range")))? = v;
        }
        SpectralField::new(b.clone(), c)
    }

    pub fn observables(&self, b: &Arc<ModeBasis>) -> Result<Vec<Observable>> {
        self.outputs
            .observables
            .iter()
            .map(|o| {
                Ok(match parse_observable_name(o).map_err(Error::Config)? {
                    ParsedObservable::Pairing(m) => {
                        if m >= b.dim() {
                            return Err(Error::Config(format!("observable {o} out of range")));
                        }
                        Observable::Pairing(SpectralField::basis_element(b, m))
                    }
                    ParsedObservable::Plain(obs) => obs,
                })
            })
            .collect()
    }

    pub fn slowfast_dt(&self, eps: f64) -> f64 {
        if self.run.dt_per_epsilon > 0.0 {
            eps * self.run.dt_per_epsilon
        } else {
            self.run.dt
        }
    }

    pub fn limit_dt(&self) -> f64 {
        if self.run.limit_dt > 0.0 {
            self.run.limit_dt
        } else {
            self.run.dt
        }
    }
}

enum ParsedObservable {
    Pairing(usize),
    Plain(Observable),
}

fn parse_observable_name(s: &str) -> std::result::Result<ParsedObservable, String> {
    let bad = || format!("unknown observable {s:?}");
    Ok(match s {
        "energy" => ParsedObservable::Plain(Observable::Energy),
        "fast_energy" => ParsedObservable::Plain(Observable::FastEnergy),
        "gap_norm" => ParsedObservable::Plain(Observable::GapNorm),
        "linearisation_gap" => ParsedObservable::Plain(Observable::LinearisationGap),
        "dissipation" => ParsedObservable::Plain(Observable::Dissipation),
        _ => {
            if let Some(l) = s.strip_prefix("band_energy:") {
                let l: f64 = l.parse().map_err(|_| bad())?;
                ParsedObservable::Plain(Observable::BandEnergy(l))
            } else if let Some(m) = s.strip_prefix("pairing:") {
                ParsedObservable::Pairing(m.parse().map_err(|_| bad())?)
            } else {
                return Err(bad());
            }
        }
    })
}

fn operator_kind(kind: &str, coeff: f64, gamma: f64) -> Result<OperatorKind> {
    Ok(match kind {
        "laplacian" => OperatorKind::Laplacian { nu: coeff },
        "friction" => OperatorKind::Friction { chi: coeff },
        "fractional" => OperatorKind::Fractional { nu: coeff, gamma },
        other => return Err(Error::Config(format!("unknown operator kind {other:?}"))),
    })
}

/// Parses `"kx,ky,cos"` or `"kx,ky,sin"` into a basis index.
pub fn parse_mode_label(b: &ModeBasis, label: &str) -> Result<usize> {
    let bad = || Error::Config(format!("mode label {label:?} is not of the form kx,ky,cos|sin"));
    let parts: Vec<&str> = label.split(',').map(str::trim).collect();
    let [kx, ky, p] = parts.as_slice() else { return Err(bad()) };
    let kx: i32 = kx.parse().map_err(|_| bad())?;
    let ky: i32 = ky.parse().map_err(|_| bad())?;
    let parity = match *p {
        "cos" => Parity::Cos,
        "sin" => Parity::Sin,
        _ => return Err(bad()),
    };
    b.index_of(WaveVector::new(kx, ky), parity)
        .ok_or_else(|| Error::Config(format!("mode {label:?} is not in the basis")))
}
