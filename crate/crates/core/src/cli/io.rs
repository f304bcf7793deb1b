//! Snapshots, checkpoints, CSV emission and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::integrators::{FastState, State};
use crate::spectral::{ModeBasis, SpectralField};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MSF1";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Encodes `MSF1 | version | K | mode count | coefficients`, all little-endian.
pub fn encode_snapshot(u: &SpectralField) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * u.dim());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(u.basis().truncation() as u32).to_le_bytes());
    out.extend_from_slice(&(u.dim() as u32).to_le_bytes());
    for c in u.coeffs() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8], basis: &Arc<ModeBasis>) -> Result<SpectralField> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|s| u32::from_le_bytes(s.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Format("snapshot header truncated".into()))
    };
    if bytes.get(..4) != Some(SNAPSHOT_MAGIC.as_slice()) {
        return Err(Error::Format("snapshot magic is not MSF1".into()));
    }
    let version = word(4)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let (k, n) = (word(8)? as usize, word(12)? as usize);
    if k != basis.truncation() || n != basis.dim() {
        return Err(Error::Format(format!(
            "snapshot has K = {k} with {n} modes, expected K = {} with {} modes",
            basis.truncation(),
            basis.dim()
        )));
    }
    let body = &bytes[16..];
    if body.len() != 8 * n {
        return Err(Error::Format(format!("snapshot body has {} bytes, expected {}", body.len(), 8 * n)));
    }
    let coeffs = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    SpectralField::new(basis.clone(), coeffs)
}

pub fn write_snapshot(path: &Path, u: &SpectralField) -> Result<()> {
    fs::write(path, encode_snapshot(u))?;
    Ok(())
}

pub fn read_snapshot(path: &Path, basis: &Arc<ModeBasis>) -> Result<SpectralField> {
    decode_snapshot(&fs::read(path)?, basis)
}

/// Everything a replica needs to continue bit-for-bit: its state, generator
/// position and the records taken so far. Floats are stored as raw bits.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ReplicaCheckpoint {
    pub index: usize,
    pub rng_seed: String,
    pub rng_stream: u64,
    pub rng_word_pos: String,
    pub t_bits: u64,
    pub dissipation_bits: u64,
    pub gap_bits: u64,
    pub times_bits: Vec<u64>,
    /// `values_bits[observable][record]`.
    pub values_bits: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CheckpointManifest {
    pub tool_version: String,
    pub fingerprint: String,
    pub kind: String,
    pub step: usize,
    pub replica: Vec<ReplicaCheckpoint>,
}

/// A replica captured at the checkpoint step.
#[derive(Clone, Debug)]
pub struct ReplicaSnapshot {
    pub state: State,
    pub rng: ChaCha8Rng,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn field_paths(dir: &Path, i: usize) -> [PathBuf; 3] {
    [
        dir.join(format!("u_{i:05}.msf")),
        dir.join(format!("y_{i:05}.msf")),
        dir.join(format!("ylin_{i:05}.msf")),
    ]
}

pub fn write_checkpoint(dir: &Path, fingerprint: &str, kind: &str, step: usize, reps: &[ReplicaSnapshot]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut replica = Vec::with_capacity(reps.len());
    for (i, r) in reps.iter().enumerate() {
        let [pu, py, pl] = field_paths(dir, i);
        write_snapshot(&pu, &r.state.u)?;
        let (dis, gap) = match &r.state.fast {
            Some(f) => {
                write_snapshot(&py, &f.y)?;
                write_snapshot(&pl, &f.big_y)?;
                (f.dissipation, f.gap_integral)
            }
            None => (0.0, 0.0),
        };
        replica.push(ReplicaCheckpoint {
            index: i,
            rng_seed: hex::encode(r.rng.get_seed()),
            rng_stream: r.rng.get_stream(),
            rng_word_pos: r.rng.get_word_pos().to_string(),
            t_bits: r.state.t.to_bits(),
            dissipation_bits: dis.to_bits(),
            gap_bits: gap.to_bits(),
            times_bits: r.times.iter().map(|t| t.to_bits()).collect(),
            values_bits: r.values.iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect(),
        });
    }
    let m = CheckpointManifest {
        tool_version: TOOL_VERSION.into(),
        fingerprint: fingerprint.into(),
        kind: kind.into(),
        step,
        replica,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("checkpoint.toml"), text)?;
    Ok(())
}

pub fn read_checkpoint(dir: &Path, basis: &Arc<ModeBasis>) -> Result<(CheckpointManifest, Vec<ReplicaSnapshot>)> {
    let text = fs::read_to_string(dir.join("checkpoint.toml"))
        .map_err(|e| Error::Config(format!("cannot read checkpoint in {}: {e}", dir.display())))?;
    let m: CheckpointManifest = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let bad = |what: &str| Error::Format(format!("checkpoint field {what} is malformed"));
    let mut reps = Vec::with_capacity(m.replica.len());
    for r in &m.replica {
        let [pu, py, pl] = field_paths(dir, r.index);
        let u = read_snapshot(&pu, basis)?;
        let fast = if m.kind == "slowfast" {
            Some(FastState {
                y: read_snapshot(&py, basis)?,
                big_y: read_snapshot(&pl, basis)?,
                dissipation: f64::from_bits(r.dissipation_bits),
                gap_integral: f64::from_bits(r.gap_bits),
            })
        } else {
            None
        };
        let seed: [u8; 32] = hex::decode(&r.rng_seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| bad("rng_seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r.rng_stream);
        rng.set_word_pos(r.rng_word_pos.parse().map_err(|_| bad("rng_word_pos"))?);
        reps.push(ReplicaSnapshot {
            state: State { step: m.step, t: f64::from_bits(r.t_bits), u, fast },
            rng,
            times: r.times_bits.iter().map(|b| f64::from_bits(*b)).collect(),
            values: r.values_bits.iter().map(|v| v.iter().map(|b| f64::from_bits(*b)).collect()).collect(),
        });
    }
    Ok((m, reps))
}

/// CSV text with a `#` header line carrying the tool version and fingerprint.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(fingerprint: &str, header: &str) -> Self {
        Self { text: format!("# slowfast {TOOL_VERSION} fingerprint {fingerprint}\n{header}\n") }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Output directory bookkeeping. The manifest is written first as
/// incomplete and rewritten as complete once the command succeeds.
pub struct OutputDir {
    pub dir: PathBuf,
    fingerprint: String,
    command: String,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, fingerprint: &str, command: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let o = Self { dir: dir.to_path_buf(), fingerprint: fingerprint.into(), command: command.into(), files: vec![] };
        o.write_manifest("incomplete", None)?;
        Ok(o)
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.into());
        }
        self.dir.join(name)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn write_manifest(&self, status: &str, error: Option<&str>) -> Result<()> {
        let mut s = format!(
            "tool = \"slowfast\"\nversion = \"{TOOL_VERSION}\"\nfingerprint = \"{}\"\ncommand = \"{}\"\nstatus = \"{status}\"\n",
            self.fingerprint, self.command
        );
        if let Some(e) = error {
            let _ = writeln!(s, "error = {:?}", e);
        }
        let files: Vec<String> = self.files.iter().map(|f| format!("{f:?}")).collect();
        let _ = writeln!(s, "files = [{}]", files.join(", "));
        fs::write(self.dir.join("MANIFEST"), s)?;
        Ok(())
    }
}
