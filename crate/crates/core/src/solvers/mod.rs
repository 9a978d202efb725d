pub mod advection;
pub mod cavity;
pub mod cg;
pub mod heat;

use serde::{Deserialize, Serialize};

pub use advection::{advection_exact, solve_advection, AdvectionConfig, Interpolation};
pub use cavity::{solve_cavity, solve_cavity_with_diagnostics, CavityConfig, CavityDiagnostics};
pub use heat::{heat_steady_state, solve_heat, HeatConfig};

use crate::error::Result;
use crate::field::{ParameterVector, ProblemTag, Real, Trajectory};

/// Solver configuration for one of the three test problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemConfig {
    Heat(HeatConfig),
    Advection(AdvectionConfig),
    Cavity(CavityConfig),
}

impl ProblemConfig {
    pub fn tag(&self) -> ProblemTag {
        match self {
            ProblemConfig::Heat(_) => ProblemTag::Heat,
            ProblemConfig::Advection(_) => ProblemTag::Advection,
            ProblemConfig::Cavity(_) => ProblemTag::Cavity,
        }
    }

    pub fn grid(&self) -> usize {
        match self {
            ProblemConfig::Heat(c) => c.grid,
            ProblemConfig::Advection(c) => c.grid,
            ProblemConfig::Cavity(c) => c.grid,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            ProblemConfig::Heat(c) => c.dt,
            ProblemConfig::Advection(c) => c.dt,
            ProblemConfig::Cavity(c) => c.dt,
        }
    }

    pub fn n_steps(&self) -> usize {
        match self {
            ProblemConfig::Heat(c) => c.n_steps,
            ProblemConfig::Advection(c) => c.n_steps,
            ProblemConfig::Cavity(c) => c.n_steps,
        }
    }

    /// Copy with a different horizon.
    pub fn with_steps(&self, n_steps: usize) -> Self {
        let mut c = self.clone();
        match &mut c {
            ProblemConfig::Heat(x) => x.n_steps = n_steps,
            ProblemConfig::Advection(x) => x.n_steps = n_steps,
            ProblemConfig::Cavity(x) => x.n_steps = n_steps,
        }
        c
    }

    /// Validation that does not depend on a particular parameter sample
    /// beyond the worst case of the parameter box.
    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemConfig::Heat(c) => c.validate(),
            ProblemConfig::Advection(c) => c.validate(1.5),
            ProblemConfig::Cavity(c) => c.validate(100.0),
        }
    }

    pub fn solve<T: Real>(&self, p: &ParameterVector) -> Result<Trajectory<T>> {
        match self {
            ProblemConfig::Heat(c) => solve_heat(c, p),
            ProblemConfig::Advection(c) => solve_advection(c, p),
            ProblemConfig::Cavity(c) => solve_cavity(c, p),
        }
    }
}
