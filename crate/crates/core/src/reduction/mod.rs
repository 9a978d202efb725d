pub mod cae;
pub mod error;
pub mod pod;

use romforge_nn::ModelFile;

pub use cae::{cae_fit, CaeConfig, CaeModel, CaeTraining};
pub use error::{mean_stderr, mre_curve, relative_error_sq, ErrorCurve};
pub use pod::{pod_fit, pod_fit_matrix, PodBasis};

use crate::error::{CoreError, Result};
use crate::field::{Field, Trajectory};
use crate::snapshots::{Normalization, SnapshotSet};

/// Encoder/decoder pair acting on raw (unnormalized) fields.
pub trait Reducer: Send + Sync {
    fn n_latent(&self) -> usize;

    /// `(nx, ny, channels)` of the fields this reducer accepts.
    fn field_shape(&self) -> (usize, usize, usize);

    fn normalization(&self) -> &Normalization;

    fn encode(&self, fields: &[&Field]) -> Result<Vec<Vec<f64>>>;

    fn decode(&self, codes: &[Vec<f64>]) -> Result<Vec<Field>>;

    fn to_model_file(&self) -> Result<ModelFile>;

    fn kind(&self) -> &'static str;

    fn check_field(&self, f: &Field) -> Result<()> {
        let (nx, ny, c) = self.field_shape();
        if (f.nx, f.ny, f.channels) != (nx, ny, c) {
            return Err(CoreError::mismatch(
                "field shape",
                format!("{nx}x{ny}x{c}"),
                format!("{}x{}x{}", f.nx, f.ny, f.channels),
            ));
        }
        Ok(())
    }

    /// Fails unless the dataset has the grid and normalization this
    /// reducer was fitted with.
    fn check_dataset(&self, set: &SnapshotSet) -> Result<()> {
        let (nx, ny, c) = self.field_shape();
        if (set.nx, set.ny, set.channels) != (nx, ny, c) {
            return Err(CoreError::mismatch(
                "grid",
                format!("{nx}x{ny}x{c}"),
                format!("{}x{}x{}", set.nx, set.ny, set.channels),
            ));
        }
        let (a, b) = (self.normalization().fingerprint(), set.normalization.fingerprint());
        if a != b {
            return Err(CoreError::mismatch("normalization hash", format!("{a:08x}"), format!("{b:08x}")));
        }
        Ok(())
    }
}

/// Latent codes of every stored state, trajectory order preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub parameter: crate::field::ParameterVector,
    pub dt: f64,
    pub codes: Vec<Vec<f64>>,
}

pub fn encode_trajectory(r: &dyn Reducer, t: &Trajectory) -> Result<LatentTrajectory> {
    let fields: Vec<&Field> = t.states.iter().collect();
    Ok(LatentTrajectory {
        parameter: t.parameter.clone(),
        dt: t.dt,
        codes: r.encode(&fields)?,
    })
}

pub fn encode_dataset(r: &dyn Reducer, trajectories: &[&Trajectory]) -> Result<Vec<LatentTrajectory>> {
    trajectories.iter().map(|t| encode_trajectory(r, t)).collect()
}

/// Decoded reconstructions `decode(encode(u))` of every state.
pub fn reconstruct(r: &dyn Reducer, t: &Trajectory) -> Result<Vec<Field>> {
    let codes = encode_trajectory(r, t)?.codes;
    r.decode(&codes)
}

/// Per-step MRE of `decode(encode(u))` against `u` on raw fields.
pub fn reconstruction_error(r: &dyn Reducer, test: &[&Trajectory]) -> Result<ErrorCurve> {
    let recon: Vec<Vec<Field>> = test.iter().map(|t| reconstruct(r, t)).collect::<Result<_>>()?;
    field_mre_curve(test, &recon)
}

/// [`mre_curve`] on fields.
pub fn field_mre_curve(reference: &[&Trajectory], approx: &[Vec<Field>]) -> Result<ErrorCurve> {
    let r: Vec<Vec<&[f64]>> = reference.iter().map(|t| t.states.iter().map(|f| f.values.as_slice()).collect()).collect();
    let a: Vec<Vec<&[f64]>> = approx.iter().map(|t| t.iter().map(|f| f.values.as_slice()).collect()).collect();
    mre_curve(&r, &a)
}

/// Loads either reducer kind from a model container.
pub fn load_reducer(file: &ModelFile) -> Result<Box<dyn Reducer>> {
    match file.meta.get("kind").and_then(|k| k.as_str()) {
        Some("pod") => Ok(Box::new(PodBasis::from_model_file(file)?)),
        Some("cae") => Ok(Box::new(CaeModel::from_model_file(file)?)),
        other => Err(CoreError::Format(format!("unknown reducer kind {other:?}"))),
    }
}
