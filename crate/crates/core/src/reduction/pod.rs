use nalgebra::{DMatrix, DVector, SymmetricEigen};
use romforge_nn::ModelFile;
use serde_json::json;

use super::Reducer;
use crate::error::{CoreError, Result};
use crate::field::Field;
use crate::snapshots::{Normalization, SnapshotSet};

/// Leading left singular vectors of the (normalized) snapshot matrix.
#[derive(Clone, Debug)]
pub struct PodBasis {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    /// `N_h × N_l`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// All singular values of the snapshot matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    pub normalization: Normalization,
}

/// Thin SVD of `s` (columns are snapshots) truncated to `n_latent` columns.
/// Wide matrices go through the eigen-decomposition of `S Sᵀ`.
pub fn pod_fit_matrix(s: &DMatrix<f64>, n_latent: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (nh, ns) = s.shape();
    let rank_bound = nh.min(ns);
    if n_latent == 0 || n_latent > rank_bound {
        return Err(CoreError::config(format!(
            "n_latent {n_latent} must lie in 1..={rank_bound} for a {nh}x{ns} snapshot matrix"
        )));
    }
    let (u, sv) = if ns <= nh {
        let svd = s.clone().svd(true, false);
        let u = svd.u.ok_or_else(|| CoreError::Solver {
            solver: "svd",
            message: "no left singular vectors".into(),
        })?;
        (u, svd.singular_values.iter().copied().collect::<Vec<_>>())
    } else {
        let gram = s * s.transpose();
        let eig = SymmetricEigen::new(gram);
        let vals: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        (eig.eigenvectors, vals)
    };
    if sv.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Solver {
            solver: "svd",
            message: "non-finite singular values".into(),
        });
    }
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(nh, n_latent);
    for (k, &j) in order.iter().take(n_latent).enumerate() {
        let mut col = u.column(j).clone_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(k, &col);
    }
    Ok((basis, order.iter().map(|&j| sv[j]).collect()))
}

/// Snapshot matrix of the normalized training states.
pub fn snapshot_matrix(set: &SnapshotSet) -> DMatrix<f64> {
    let cols: Vec<Field> = set
        .train()
        .iter()
        .flat_map(|t| t.states.iter())
        .map(|f| set.normalization.normalize(f))
        .collect();
    DMatrix::from_fn(set.field_len(), cols.len(), |i, j| cols[j].values[i])
}

pub fn pod_fit(set: &SnapshotSet, n_latent: usize) -> Result<PodBasis> {
    let s = snapshot_matrix(set);
    let (basis, singular_values) = pod_fit_matrix(&s, n_latent)?;
    Ok(PodBasis {
        nx: set.nx,
        ny: set.ny,
        channels: set.channels,
        basis,
        singular_values,
        normalization: set.normalization.clone(),
    })
}

impl PodBasis {
    /// Same basis with fewer columns.
    pub fn truncated(&self, n_latent: usize) -> Result<PodBasis> {
        if n_latent == 0 || n_latent > self.basis.ncols() {
            return Err(CoreError::config(format!("cannot truncate to {n_latent} modes")));
        }
        Ok(PodBasis {
            basis: self.basis.columns(0, n_latent).clone_owned(),
            ..self.clone()
        })
    }

    pub fn from_model_file(f: &ModelFile) -> Result<Self> {
        let m = &f.meta;
        let get = |k: &str| {
            m.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| CoreError::Format(format!("pod manifest lacks {k}")))
        };
        let (nx, ny, channels) = (get("nx")?, get("ny")?, get("channels")?);
        let normalization: Normalization = serde_json::from_value(m["normalization"].clone())
            .map_err(|e| CoreError::Format(format!("pod normalization: {e}")))?;
        let (shape, data) = f.array("basis")?;
        if shape.len() != 2 || shape[0] != nx * ny * channels {
            return Err(CoreError::Format(format!("pod basis shape {shape:?}")));
        }
        let basis = DMatrix::from_row_slice(shape[0], shape[1], data);
        let singular_values = f.array("singular_values")?.1.to_vec();
        Ok(Self {
            nx,
            ny,
            channels,
            basis,
            singular_values,
            normalization,
        })
    }
}

impl Reducer for PodBasis {
    fn n_latent(&self) -> usize {
        self.basis.ncols()
    }

    fn field_shape(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.channels)
    }

    fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    fn kind(&self) -> &'static str {
        "pod"
    }

    fn encode(&self, fields: &[&Field]) -> Result<Vec<Vec<f64>>> {
        fields
            .iter()
            .map(|f| {
                self.check_field(f)?;
                let x = DVector::from_vec(self.normalization.normalize(f).values);
                Ok((self.basis.transpose() * x).iter().copied().collect())
            })
            .collect()
    }

    fn decode(&self, codes: &[Vec<f64>]) -> Result<Vec<Field>> {
        codes
            .iter()
            .map(|c| {
                if c.len() != self.n_latent() {
                    return Err(CoreError::mismatch("latent width", self.n_latent(), c.len()));
                }
                let x = &self.basis * DVector::from_column_slice(c);
                let f = Field::from_values(self.nx, self.ny, self.channels, x.iter().copied().collect())?;
                Ok(self.normalization.denormalize(&f))
            })
            .collect()
    }

    fn to_model_file(&self) -> Result<ModelFile> {
        let mut f = ModelFile::new(json!({
            "kind": "pod",
            "nx": self.nx,
            "ny": self.ny,
            "channels": self.channels,
            "n_latent": self.n_latent(),
            "normalization": self.normalization,
        }));
        let (r, c) = self.basis.shape();
        let mut rows = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                rows.push(self.basis[(i, j)]);
            }
        }
        f.add_array("basis", vec![r, c], rows)?;
        f.add_array("singular_values", vec![self.singular_values.len()], self.singular_values.clone())?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery_at_true_rank() {
        let a = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = DMatrix::from_fn(3, 12, |i, j| ((i * 5 + j * 2) % 7) as f64 - 3.0);
        let s = &a * &b;
        let (v, sv) = pod_fit_matrix(&s, 3).unwrap();
        let r = &v * (v.transpose() * &s);
        assert!((r - &s).norm() < 1e-10 * s.norm());
        assert!(sv[3] < 1e-10 * sv[0]);
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn wide_path_agrees_with_tall_path() {
        let s = DMatrix::from_fn(12, 40, |i, j| ((i * 13 + j * 7) % 17) as f64 / 17.0 + (i as f64 * j as f64).sin());
        let (_, sv_wide) = pod_fit_matrix(&s, 5).unwrap();
        let (_, sv_tall) = pod_fit_matrix(&s.transpose(), 5).unwrap();
        for k in 0..5 {
            assert!((sv_wide[k] - sv_tall[k]).abs() < 1e-9 * sv_tall[0]);
        }
    }

    #[test]
    fn rejects_too_many_modes() {
        let s = DMatrix::from_element(4, 3, 1.0);
        assert!(pod_fit_matrix(&s, 4).is_err());
    }
}
