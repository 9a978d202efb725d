use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Floating-point type the solvers are generic over.
pub trait Real: Float + FromPrimitive + Debug + Default + Sum + Send + Sync + 'static {
    fn c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable constant")
    }
}

impl<T: Float + FromPrimitive + Debug + Default + Sum + Send + Sync + 'static> Real for T {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemTag {
    Heat,
    Advection,
    Cavity,
}

impl ProblemTag {
    /// Lower and upper bounds of every parameter coordinate.
    pub fn parameter_box(self) -> Vec<(f64, f64)> {
        match self {
            ProblemTag::Heat => vec![(0.1, 1.5); 4],
            ProblemTag::Advection => vec![(0.5, 1.5), (0.0, 2.0 * std::f64::consts::PI)],
            ProblemTag::Cavity => vec![(100.0, 300.0)],
        }
    }

    pub fn n_params(self) -> usize {
        self.parameter_box().len()
    }

    pub fn channels(self) -> usize {
        match self {
            ProblemTag::Cavity => 3,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemTag::Heat => "heat",
            ProblemTag::Advection => "advection",
            ProblemTag::Cavity => "cavity",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ProblemTag::Heat => 0,
            ProblemTag::Advection => 1,
            ProblemTag::Cavity => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(ProblemTag::Heat),
            1 => Ok(ProblemTag::Advection),
            2 => Ok(ProblemTag::Cavity),
            _ => Err(CoreError::Format(format!("unknown problem code {c}"))),
        }
    }
}

impl std::str::FromStr for ProblemTag {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heat" => Ok(ProblemTag::Heat),
            "advection" => Ok(ProblemTag::Advection),
            "cavity" => Ok(ProblemTag::Cavity),
            _ => Err(CoreError::config(format!("unknown problem {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub tag: ProblemTag,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(tag: ProblemTag, values: Vec<f64>) -> Result<Self> {
        let p = Self { tag, values };
        p.validate()?;
        Ok(p)
    }

    /// Builds a vector without the box check (for tests of limiting cases).
    pub fn unchecked(tag: ProblemTag, values: Vec<f64>) -> Self {
        Self { tag, values }
    }

    pub fn validate(&self) -> Result<()> {
        let bx = self.tag.parameter_box();
        if self.values.len() != bx.len() {
            return Err(CoreError::mismatch(
                format!("{} parameter count", self.tag.as_str()),
                bx.len(),
                self.values.len(),
            ));
        }
        for (k, (&v, &(lo, hi))) in self.values.iter().zip(&bx).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(CoreError::config(format!(
                    "{} parameter {k} = {v} outside [{lo}, {hi}]",
                    self.tag.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Affine map of every coordinate from its box onto [-1, 1].
    pub fn scaled(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.tag.parameter_box())
            .map(|(&v, (lo, hi))| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    }
}

/// Cell-centred multi-channel field on the unit square, stored
/// channel-major then row-major (`values[(c * ny + j) * nx + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T = f64> {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(nx: usize, ny: usize, channels: usize) -> Self {
        Self {
            nx,
            ny,
            channels,
            values: vec![T::zero(); nx * ny * channels],
        }
    }

    pub fn from_values(nx: usize, ny: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != nx * ny * channels {
            return Err(CoreError::mismatch("field value count", nx * ny * channels, values.len()));
        }
        Ok(Self {
            nx,
            ny,
            channels,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, j: usize, i: usize) -> T {
        self.values[(c * self.ny + j) * self.nx + i]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.nx * self.ny;
        &self.values[c * n..(c + 1) * n]
    }

    /// Cell-centre coordinate `(x_i, y_j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) / self.nx as f64, (j as f64 + 0.5) / self.ny as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn to_f64(&self) -> Field<f64> {
        Field {
            nx: self.nx,
            ny: self.ny,
            channels: self.channels,
            values: self.values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        }
    }

    /// Bilinear resampling of every channel onto another cell-centred grid,
    /// clamping at the outer cell centres.
    pub fn resample(&self, nx: usize, ny: usize) -> Field<T> {
        if nx == self.nx && ny == self.ny {
            return self.clone();
        }
        let mut out = Field::zeros(nx, ny, self.channels);
        let coord = |t: f64, n: usize| -> (usize, usize, T) {
            let s = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (s.floor() as usize).min(n.saturating_sub(2));
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, T::c(s - i0 as f64))
        };
        for c in 0..self.channels {
            for j in 0..ny {
                let (j0, j1, wy) = coord((j as f64 + 0.5) / ny as f64, self.ny);
                for i in 0..nx {
                    let (i0, i1, wx) = coord((i as f64 + 0.5) / nx as f64, self.nx);
                    let one = T::one();
                    let v = (one - wy) * ((one - wx) * self.at(c, j0, i0) + wx * self.at(c, j0, i1))
                        + wy * ((one - wx) * self.at(c, j1, i0) + wx * self.at(c, j1, i1));
                    out.values[(c * ny + j) * nx + i] = v;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T = f64> {
    pub parameter: ParameterVector,
    /// Time between consecutive stored states.
    pub dt: f64,
    pub states: Vec<Field<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// Keeps states `0, s, 2s, ...` and scales the time step accordingly.
    pub fn subsample(&self, stride: usize) -> Trajectory<T> {
        Trajectory {
            parameter: self.parameter.clone(),
            dt: self.dt * stride as f64,
            states: self.states.iter().step_by(stride.max(1)).cloned().collect(),
        }
    }

    pub fn to_f64(&self) -> Trajectory<f64> {
        Trajectory {
            parameter: self.parameter.clone(),
            dt: self.dt,
            states: self.states.iter().map(Field::to_f64).collect(),
        }
    }
}
