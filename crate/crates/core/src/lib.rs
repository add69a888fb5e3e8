//! Massless scalar field in a 1+1 dimensional cavity with moving mirrors.
//!
//! The field is expanded in the instantaneous Dirichlet modes of the cavity.
//! Evolving a static in basis through the motion and projecting onto the
//! static out basis yields the Bogoliubov coefficients, whose spectra are then
//! fitted to gray-body thermal models.

pub mod bogoliubov;
pub mod dynamics;
pub mod error;
pub mod extrapolate;
pub mod integrator;
pub mod io;
pub mod simulation;
pub mod spectra;
pub mod trajectory;

pub use bogoliubov::{BasisSpec, BogoliubovPair};
pub use dynamics::StateColumn;
pub use error::{Error, Result};
pub use extrapolate::{ExtrapolatedPair, Magnitudes};
pub use integrator::{StepStats, Tolerances};
pub use simulation::{simulate, SimulationConfig, SimulationOutput};
pub use trajectory::{BoundaryMotion, CompositeTrajectory, Family, TrajectoryParams};
