//! Parameter sampling, trajectory generation, stride subsampling, min–max
//! normalization and the `ROMDS1` dataset container.
//!
//! Layout: magic `ROMDS1`, `u32` version, `u32` header length, header,
//! `u32` header CRC32, then one block per trajectory (`u8` test flag,
//! parameters, states) each followed by its CRC32. All numbers little-endian.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::field::{Field, ParameterVector, ProblemTag, Trajectory};
use crate::solvers::ProblemConfig;

pub const MAGIC: &[u8; 6] = b"ROMDS1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub seed: u64,
    /// Sub-box `[lo, hi]` per parameter to sample from; defaults to the
    /// problem's admissible box.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
}

fn default_n_test() -> usize {
    15
}

impl SamplerConfig {
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_test,
            seed,
            bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(CoreError::config("n_train and n_test must both be at least 1"));
        }
        Ok(())
    }

    /// Sampling box for `tag`, checked against the admissible box.
    pub fn sampling_box(&self, tag: ProblemTag) -> Result<Vec<(f64, f64)>> {
        let admissible = tag.parameter_box();
        let Some(b) = &self.bounds else {
            return Ok(admissible);
        };
        if b.len() != admissible.len() {
            return Err(CoreError::config(format!(
                "dataset.bounds: {} expects {} parameter ranges, got {}",
                tag.as_str(),
                admissible.len(),
                b.len()
            )));
        }
        for (k, (&[lo, hi], &(alo, ahi))) in b.iter().zip(&admissible).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi && lo >= alo && hi <= ahi) {
                return Err(CoreError::config(format!(
                    "dataset.bounds[{k}] = [{lo}, {hi}] must be an increasing range inside [{alo}, {ahi}]"
                )));
            }
        }
        Ok(b.iter().map(|&[lo, hi]| (lo, hi)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub parameter: ParameterVector,
    pub is_test: bool,
}

/// `n_train` training samples followed by `n_test` test samples, i.i.d.
/// uniform on the sampling box; duplicates are redrawn so the two
/// sets are disjoint.
pub fn sample_parameters(cfg: &SamplerConfig, tag: ProblemTag) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let bx = cfg.sampling_box(tag)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<Sample> = Vec::with_capacity(cfg.n_train + cfg.n_test);
    while out.len() < cfg.n_train + cfg.n_test {
        let values: Vec<f64> = bx.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect();
        if out.iter().any(|s| s.parameter.values == values) {
            continue;
        }
        let is_test = out.len() >= cfg.n_train;
        out.push(Sample {
            parameter: ParameterVector::new(tag, values)?,
            is_test,
        });
    }
    Ok(out)
}

/// Per-channel affine map of the training range onto [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            min: vec![-1.0; channels],
            max: vec![1.0; channels],
        }
    }

    pub fn fit<'a>(channels: usize, fields: impl IntoIterator<Item = &'a Field>) -> Self {
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for f in fields {
            for c in 0..channels {
                for &v in f.channel(c) {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        Self { min, max }
    }

    fn range(&self, c: usize) -> f64 {
        let r = self.max[c] - self.min[c];
        if r > 0.0 {
            r
        } else {
            2.0
        }
    }

    pub fn normalize_value(&self, c: usize, v: f64) -> f64 {
        2.0 * (v - self.min[c]) / self.range(c) - 1.0
    }

    pub fn denormalize_value(&self, c: usize, v: f64) -> f64 {
        (v + 1.0) * 0.5 * self.range(c) + self.min[c]
    }

    pub fn normalize(&self, f: &Field) -> Field {
        self.map(f, Self::normalize_value)
    }

    pub fn denormalize(&self, f: &Field) -> Field {
        self.map(f, Self::denormalize_value)
    }

    fn map(&self, f: &Field, g: fn(&Self, usize, f64) -> f64) -> Field {
        let n = f.nx * f.ny;
        let values = f.values.iter().enumerate().map(|(k, &v)| g(self, k / n, v)).collect();
        Field {
            values,
            ..f.clone()
        }
    }

    /// Short fingerprint used to detect model/dataset mismatches.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for v in self.min.iter().chain(&self.max) {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub tag: ProblemTag,
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    /// Solver time step.
    pub dt: f64,
    pub stride: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub normalization: Normalization,
    /// Subsampled trajectories; their `dt` is `stride · dt`.
    pub trajectories: Vec<Trajectory>,
    pub is_test: Vec<bool>,
}

impl SnapshotSet {
    pub fn stored_steps(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.states.len())
    }

    /// Time of stored state `n`: exactly `(n·s)·δt`.
    pub fn time(&self, n: usize) -> f64 {
        (n * self.stride) as f64 * self.dt
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.trajectories.len()).filter(|&k| !self.is_test[k]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.trajectories.len()).filter(|&k| self.is_test[k]).collect()
    }

    pub fn train(&self) -> Vec<&Trajectory> {
        self.train_indices().into_iter().map(|k| &self.trajectories[k]).collect()
    }

    pub fn test(&self) -> Vec<&Trajectory> {
        self.test_indices().into_iter().map(|k| &self.trajectories[k]).collect()
    }

    pub fn field_len(&self) -> usize {
        self.nx * self.ny * self.channels
    }

    /// Fails if any test parameter coincides with a training parameter.
    pub fn assert_disjoint(&self) -> Result<()> {
        for a in self.test() {
            if self.train().iter().any(|b| b.parameter.values == a.parameter.values) {
                return Err(CoreError::config(format!(
                    "test parameter {:?} also appears in the training set",
                    a.parameter.values
                )));
            }
        }
        Ok(())
    }

    /// Copy restricted to the given trajectory indices (normalization kept).
    pub fn subset(&self, indices: &[usize]) -> SnapshotSet {
        let trajectories: Vec<Trajectory> = indices.iter().map(|&k| self.trajectories[k].clone()).collect();
        let is_test: Vec<bool> = indices.iter().map(|&k| self.is_test[k]).collect();
        SnapshotSet {
            n_train: is_test.iter().filter(|t| !**t).count(),
            n_test: is_test.iter().filter(|t| **t).count(),
            trajectories,
            is_test,
            normalization: self.normalization.clone(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> SnapshotSet {
        SnapshotSet {
            tag: self.tag,
            nx: self.nx,
            ny: self.ny,
            channels: self.channels,
            dt: self.dt,
            stride: self.stride,
            seed: self.seed,
            n_train: self.n_train,
            n_test: self.n_test,
            normalization: self.normalization.clone(),
            trajectories: Vec::new(),
            is_test: Vec::new(),
        }
    }

    /// `index,split,mu_1,...` table of the sampled parameters.
    pub fn parameter_csv(&self) -> String {
        let np = self.tag.n_params();
        let mut s = String::from("index,split");
        for k in 0..np {
            s.push_str(&format!(",mu_{}", k + 1));
        }
        s.push('\n');
        for (k, t) in self.trajectories.iter().enumerate() {
            s.push_str(&format!("{k},{}", if self.is_test[k] { "test" } else { "train" }));
            for v in &t.parameter.values {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub stride: usize,
    /// Resample stored fields to this square resolution (architecture input).
    #[serde(default)]
    pub resample: Option<usize>,
}

impl DatasetConfig {
    /// Stored form of a solver trajectory: every `stride`-th state,
    /// resampled when configured.
    pub fn prepare(&self, t: &Trajectory) -> Trajectory {
        let mut t = t.subsample(self.stride);
        if let Some(r) = self.resample {
            t.states = t.states.iter().map(|f| f.resample(r, r)).collect();
        }
        t
    }
}

/// Solves every sample (in parallel, ordered by sample index), subsamples
/// with `stride`, optionally resamples, and fits the normalization on the
/// training trajectories.
pub fn build_dataset(
    problem: &ProblemConfig,
    samples: &[Sample],
    cfg: &DatasetConfig,
    seed: u64,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<SnapshotSet> {
    problem.validate()?;
    if cfg.stride == 0 {
        return Err(CoreError::config("stride must be at least 1"));
    }
    if samples.iter().all(|s| s.is_test) || samples.iter().all(|s| !s.is_test) {
        return Err(CoreError::config("dataset needs at least one training and one test sample"));
    }
    let total = samples.len();
    let trajectories: Vec<Trajectory> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let t = problem.solve::<f64>(&s.parameter).map_err(|e| CoreError::Trajectory {
                index: k,
                source: Box::new(e),
            })?;
            let t = cfg.prepare(&t);
            if let Some(cb) = progress {
                cb(k, total);
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let first = &trajectories[0].states[0];
    let (nx, ny, channels) = (first.nx, first.ny, first.channels);
    let normalization = Normalization::fit(
        channels,
        trajectories.iter().zip(samples).filter(|(_, s)| !s.is_test).flat_map(|(t, _)| t.states.iter()),
    );
    let set = SnapshotSet {
        tag: problem.tag(),
        nx,
        ny,
        channels,
        dt: problem.dt(),
        stride: cfg.stride,
        seed,
        n_train: samples.iter().filter(|s| !s.is_test).count(),
        n_test: samples.iter().filter(|s| s.is_test).count(),
        normalization,
        trajectories,
        is_test: samples.iter().map(|s| s.is_test).collect(),
    };
    set.assert_disjoint()?;
    Ok(set)
}

fn encode_header(set: &SnapshotSet) -> Result<Vec<u8>> {
    let mut h = Vec::new();
    h.write_u8(set.tag.code())?;
    h.write_u32::<LE>(set.nx as u32)?;
    h.write_u32::<LE>(set.ny as u32)?;
    h.write_u32::<LE>(set.channels as u32)?;
    h.write_f64::<LE>(set.dt)?;
    h.write_u32::<LE>(set.stride as u32)?;
    h.write_u32::<LE>(set.trajectories.len() as u32)?;
    h.write_u32::<LE>(set.stored_steps() as u32)?;
    h.write_u32::<LE>(set.tag.n_params() as u32)?;
    h.write_u64::<LE>(set.seed)?;
    h.write_u32::<LE>(set.n_train as u32)?;
    h.write_u32::<LE>(set.n_test as u32)?;
    for c in 0..set.channels {
        h.write_f64::<LE>(set.normalization.min[c])?;
        h.write_f64::<LE>(set.normalization.max[c])?;
    }
    Ok(h)
}

pub fn dataset_to_bytes(set: &SnapshotSet) -> Result<Vec<u8>> {
    let steps = set.stored_steps();
    if set.trajectories.iter().any(|t| t.states.len() != steps) {
        return Err(CoreError::Format("all trajectories must store the same number of states".into()));
    }
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    out.write_u32::<LE>(VERSION)?;
    let header = encode_header(set)?;
    out.write_u32::<LE>(header.len() as u32)?;
    out.write_all(&header)?;
    out.write_u32::<LE>(crc32fast::hash(&header))?;
    for (t, &is_test) in set.trajectories.iter().zip(&set.is_test) {
        let mut b = Vec::with_capacity(1 + 8 * (t.parameter.values.len() + steps * set.field_len()));
        b.write_u8(u8::from(is_test))?;
        for &v in &t.parameter.values {
            b.write_f64::<LE>(v)?;
        }
        for s in &t.states {
            for &v in &s.values {
                b.write_f64::<LE>(v)?;
            }
        }
        out.write_all(&b)?;
        out.write_u32::<LE>(crc32fast::hash(&b))?;
    }
    Ok(out)
}

fn fmt_err(e: std::io::Error) -> CoreError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CoreError::Format("truncated dataset file".into())
    } else {
        CoreError::Io(e)
    }
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<SnapshotSet> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(fmt_err)?;
    if &magic != MAGIC {
        return Err(CoreError::Format("bad magic, not a ROMDS1 dataset".into()));
    }
    let version = r.read_u32::<LE>().map_err(fmt_err)?;
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported dataset version {version}")));
    }
    let hlen = r.read_u32::<LE>().map_err(fmt_err)? as usize;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header).map_err(fmt_err)?;
    if r.read_u32::<LE>().map_err(fmt_err)? != crc32fast::hash(&header) {
        return Err(CoreError::Format("header checksum mismatch".into()));
    }
    let mut h = Cursor::new(&header[..]);
    let tag = ProblemTag::from_code(h.read_u8().map_err(fmt_err)?)?;
    let nx = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let ny = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let channels = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let dt = h.read_f64::<LE>().map_err(fmt_err)?;
    let stride = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let n_traj = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let steps = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let n_params = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let seed = h.read_u64::<LE>().map_err(fmt_err)?;
    let n_train = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let n_test = h.read_u32::<LE>().map_err(fmt_err)? as usize;
    let mut normalization = Normalization {
        min: Vec::new(),
        max: Vec::new(),
    };
    for _ in 0..channels {
        normalization.min.push(h.read_f64::<LE>().map_err(fmt_err)?);
        normalization.max.push(h.read_f64::<LE>().map_err(fmt_err)?);
    }
    if n_params != tag.n_params() || n_train + n_test != n_traj {
        return Err(CoreError::Format("inconsistent dataset header".into()));
    }
    let field_len = nx * ny * channels;
    let block_len = 1 + 8 * (n_params + steps * field_len);
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut is_test = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let start = r.position() as usize;
        if bytes.len() < start + block_len + 4 {
            return Err(CoreError::Format(format!("truncated dataset file in trajectory {k}")));
        }
        let block = &bytes[start..start + block_len];
        r.set_position((start + block_len) as u64);
        if r.read_u32::<LE>().map_err(fmt_err)? != crc32fast::hash(block) {
            return Err(CoreError::Format(format!("checksum mismatch in trajectory {k}")));
        }
        let mut b = Cursor::new(block);
        is_test.push(b.read_u8().map_err(fmt_err)? != 0);
        let mut params = vec![0.0; n_params];
        b.read_f64_into::<LE>(&mut params).map_err(fmt_err)?;
        let mut states = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut v = vec![0.0; field_len];
            b.read_f64_into::<LE>(&mut v).map_err(fmt_err)?;
            states.push(Field::from_values(nx, ny, channels, v)?);
        }
        trajectories.push(Trajectory {
            parameter: ParameterVector::unchecked(tag, params),
            dt: dt * stride as f64,
            states,
        });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(CoreError::Format("trailing bytes after last trajectory".into()));
    }
    Ok(SnapshotSet {
        tag,
        nx,
        ny,
        channels,
        dt,
        stride,
        seed,
        n_train,
        n_test,
        normalization,
        trajectories,
        is_test,
    })
}

pub fn save_dataset(set: &SnapshotSet, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &dataset_to_bytes(set)?)
}

pub fn load_dataset(path: &Path) -> Result<SnapshotSet> {
    dataset_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::HeatConfig;

    fn tiny_heat() -> SnapshotSet {
        let problem = ProblemConfig::Heat(HeatConfig {
            grid: 8,
            n_steps: 6,
            ..Default::default()
        });
        let samples = sample_parameters(
            &SamplerConfig::new(2, 1, 3),
            ProblemTag::Heat,
        )
        .unwrap();
        build_dataset(
            &problem,
            &samples,
            &DatasetConfig {
                stride: 2,
                resample: None,
            },
            3,
            None,
        )
        .unwrap()
    }

    #[test]
    fn stride_and_times() {
        let s = tiny_heat();
        assert_eq!(s.stored_steps(), 4);
        assert_eq!(s.time(3), 0.6000000000000001);
        assert_eq!(s.time(3), (3 * 2) as f64 * 0.1);
    }

    #[test]
    fn normalization_range_is_unit() {
        let s = tiny_heat();
        let norm: Vec<Field> = s.train().iter().flat_map(|t| t.states.iter()).map(|f| s.normalization.normalize(f)).collect();
        let min = norm.iter().flat_map(|f| f.values.iter()).cloned().fold(f64::MAX, f64::min);
        let max = norm.iter().flat_map(|f| f.values.iter()).cloned().fold(f64::MIN, f64::max);
        assert_eq!((min, max), (-1.0, 1.0));
    }

    #[test]
    fn round_trip_and_corruption() {
        let s = tiny_heat();
        let bytes = dataset_to_bytes(&s).unwrap();
        let t = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(t, s);
        assert_eq!(dataset_to_bytes(&t).unwrap(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(dataset_from_bytes(&bad), Err(CoreError::Format(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 10;
        flipped[last] ^= 1;
        assert!(matches!(dataset_from_bytes(&flipped), Err(CoreError::Format(_))));
        assert!(matches!(dataset_from_bytes(&bytes[..bytes.len() - 3]), Err(CoreError::Format(_))));
    }
}
