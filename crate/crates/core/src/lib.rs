//! Mixed finite element solver for isothermal multicomponent Stokes flow
//! coupled to Onsager-Stefan-Maxwell diffusion.
//!
//! The discretisation uses the symmetric stress element of Arnold and
//! Winther for the viscous stress, continuous Lagrange elements for the
//! chemical potentials and pressure, and discontinuous linear vector fields
//! for the species and mass-average velocities. Each Picard step solves one
//! symmetric perturbed saddle-point system.

pub mod assembly;
pub mod cases;
pub mod error;
pub mod exec;
pub mod fe;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod thermo;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
pub use mesh::{BoundaryTag, Diagonal, Mesh};
