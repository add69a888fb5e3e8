//! Shared workloads for the criterion benchmarks.

use cavity_core::bogoliubov::{static_basis_column, BasisSpec};
use cavity_core::dynamics::ModeSystem;
use cavity_core::{Family, TrajectoryParams};

pub const EPSILON: f64 = 0.375;
pub const KAPPA: f64 = 33.3;

pub fn one_mirror() -> TrajectoryParams {
    TrajectoryParams::standard(Family::OneMirror, EPSILON, KAPPA).expect("valid trajectory")
}

/// Packed state holding the full static in basis at cutoff `n`, and its system.
pub fn basis_state(traj: &TrajectoryParams, n: usize) -> (ModeSystem<'_, TrajectoryParams>, Vec<f64>) {
    let system = ModeSystem::new(traj, (1..=n).collect(), n).expect("valid system");
    let spec = BasisSpec::new(traj.initial_length(), 0.0, n).expect("valid spec");
    let mut y = vec![0.0; system.dim()];
    for k in 0..n {
        let col = static_basis_column(&spec, k + 1, 0.0).expect("mode in range");
        system.pack_column(k, &col, &mut y);
    }
    (system, y)
}
