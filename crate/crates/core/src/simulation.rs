//! Evolution of a full in basis through a trajectory and extraction of the pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bogoliubov::{extract, kg_product, static_basis_column, BasisSpec, BogoliubovPair};
use crate::dynamics::{ModeSystem, StateColumn};
use crate::error::{Error, Result};
use crate::integrator::{integrate_through, StepStats, Tolerances};
use crate::trajectory::{BoundaryMotion, DEFAULT_V_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub cutoff: usize,
    pub tolerances: Tolerances,
    pub v_tol: f64,
    /// Columns integrated together; 0 puts every column of a parity class in one batch.
    pub chunk: usize,
    /// Evolve odd and even modes as separate systems. Only valid when the
    /// coupling never mixes parities (symmetric pair).
    pub parity_split: bool,
    /// Number of evenly spaced times at which basis norms and overlaps are checked.
    pub checkpoints: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            cutoff: 64,
            tolerances: Tolerances::default(),
            v_tol: DEFAULT_V_TOL,
            chunk: 0,
            parity_split: false,
            checkpoints: 0,
        }
    }
}

impl SimulationConfig {
    pub fn with_cutoff(cutoff: usize) -> Self {
        SimulationConfig {
            cutoff,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 {
            return Err(Error::invalid("cutoff", "must be at least 1"));
        }
        if !(self.v_tol > 0.0 && self.v_tol < 1.0) {
            return Err(Error::invalid("v_tol", format!("{} is not in (0, 1)", self.v_tol)));
        }
        self.tolerances.validate()
    }
}

/// Basis diagnostics at one time. Overlaps are taken among columns of the same batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub max_norm_error: f64,
    pub max_overlap: f64,
    pub max_conj_overlap: f64,
}

impl Checkpoint {
    fn merge(&mut self, other: &Checkpoint) {
        self.max_norm_error = self.max_norm_error.max(other.max_norm_error);
        self.max_overlap = self.max_overlap.max(other.max_overlap);
        self.max_conj_overlap = self.max_conj_overlap.max(other.max_conj_overlap);
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub pair: BogoliubovPair,
    pub stats: StepStats,
    pub window: (f64, f64),
    /// Largest boundary speed at either end of the window.
    pub residual_speed: f64,
    pub checkpoints: Vec<Checkpoint>,
}

/// Norm and overlap extremes over a set of columns at a common time.
pub fn basis_diagnostics(columns: &[StateColumn]) -> Result<Checkpoint> {
    let t = columns.first().map(|c| c.t).unwrap_or(0.0);
    let mut cp = Checkpoint {
        t,
        max_norm_error: 0.0,
        max_overlap: 0.0,
        max_conj_overlap: 0.0,
    };
    let conj: Vec<StateColumn> = columns.iter().map(StateColumn::conj).collect();
    for (i, u) in columns.iter().enumerate() {
        for (j, v) in columns.iter().enumerate() {
            if i == j {
                cp.max_norm_error = cp.max_norm_error.max((kg_product(u, u)? - 1.0).norm());
            } else if j > i {
                cp.max_overlap = cp.max_overlap.max(kg_product(u, v)?.norm());
            }
            cp.max_conj_overlap = cp.max_conj_overlap.max(kg_product(u, &conj[j])?.norm());
        }
    }
    Ok(cp)
}

struct Batch {
    modes: Vec<usize>,
    columns: Vec<usize>,
}

fn batches(cfg: &SimulationConfig) -> Vec<Batch> {
    let n = cfg.cutoff;
    let classes: Vec<Vec<usize>> = if cfg.parity_split {
        [1, 2]
            .iter()
            .map(|&first| (first..=n).step_by(2).collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect()
    } else {
        vec![(1..=n).collect()]
    };
    let mut out = Vec::new();
    for modes in classes {
        let size = if cfg.chunk == 0 { modes.len() } else { cfg.chunk };
        for cols in modes.chunks(size) {
            out.push(Batch {
                modes: modes.clone(),
                columns: cols.to_vec(),
            });
        }
    }
    out
}

struct BatchResult {
    columns: Vec<(usize, StateColumn)>,
    stats: StepStats,
    checkpoints: Vec<Checkpoint>,
}

fn run_batch<M: BoundaryMotion + ?Sized>(
    traj: &M,
    cfg: &SimulationConfig,
    batch: &Batch,
    in_spec: &BasisSpec,
    stops: &[(f64, bool)],
) -> Result<BatchResult> {
    let n = cfg.cutoff;
    let mut system = ModeSystem::new(traj, batch.modes.clone(), batch.columns.len())?;
    let mut y = vec![0.0; system.dim()];
    for (k, &mode) in batch.columns.iter().enumerate() {
        system.pack_column(k, &static_basis_column(in_spec, mode, in_spec.t_ref)?, &mut y);
    }
    let times: Vec<f64> = stops.iter().map(|s| s.0).collect();
    let mut checkpoints = Vec::new();
    let mut last = Vec::new();
    let unpack = |system: &ModeSystem<M>, t: f64, y: &[f64]| -> Vec<StateColumn> {
        (0..batch.columns.len())
            .map(|k| system.unpack_column(k, t, n, y))
            .collect()
    };
    // The closure needs the system mutably for the derivative and immutably to
    // unpack, so unpacking uses a second, stateless view with the same layout.
    let view = ModeSystem::new(traj, batch.modes.clone(), batch.columns.len())?;
    let stats = integrate_through(
        |t, y, dy| system.derivative(t, y, dy),
        in_spec.t_ref,
        &times,
        &mut y,
        cfg.tolerances,
        |i, t, y| {
            let is_checkpoint = stops[i].1;
            let final_stop = i + 1 == stops.len();
            if is_checkpoint || final_stop {
                let cols = unpack(&view, t, y);
                if is_checkpoint {
                    let mut cp = basis_diagnostics(&cols)?;
                    cp.t = t;
                    checkpoints.push(cp);
                }
                if final_stop {
                    last = cols;
                }
            }
            Ok(())
        },
    )
    .map_err(|e| match e {
        Error::Divergence { t, component: Some(k), .. } => Error::Divergence {
            t,
            component: Some(k),
            column: Some(batch.columns[(k % (2 * batch.columns.len())) / 2]),
        },
        other => other,
    })?;
    Ok(BatchResult {
        columns: batch.columns.iter().copied().zip(last).collect(),
        stats,
        checkpoints,
    })
}

/// Evolves every in-basis column across the static window of `traj` and
/// extracts the Bogoliubov pair against the out basis.
pub fn simulate<M: BoundaryMotion + ?Sized>(traj: &M, cfg: &SimulationConfig) -> Result<SimulationOutput> {
    cfg.validate()?;
    let (t_in, t_out) = traj.simulation_window(cfg.v_tol)?;
    let in_spec = BasisSpec::new(traj.initial_length(), t_in, cfg.cutoff)?;
    let out_spec = BasisSpec::new(traj.final_length(), t_out, cfg.cutoff)?;

    let speed = |t: f64| {
        let b = traj.boundaries(t);
        b.fdot.abs().max(b.gdot.abs())
    };
    let residual_speed = speed(t_in).max(speed(t_out));
    if residual_speed > cfg.v_tol * (1.0 + 1e-6) {
        log::warn!(
            "window [{t_in}, {t_out}] is not static: residual boundary speed {residual_speed:e} exceeds {:e}",
            cfg.v_tol
        );
    }

    let mut stops: Vec<(f64, bool)> = (1..=cfg.checkpoints)
        .map(|k| (t_in + (t_out - t_in) * k as f64 / cfg.checkpoints as f64, true))
        .collect();
    stops.extend(
        traj.breakpoints()
            .into_iter()
            .filter(|&t| t > t_in && t < t_out)
            .map(|t| (t, false)),
    );
    stops.push((t_out, false));
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Merge duplicates, keeping the checkpoint flag; the last stop lands exactly on t_out.
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(stops.len());
    for (t, flag) in stops {
        match merged.last_mut() {
            Some(prev) if (t - prev.0).abs() <= 1e-14 * t.abs().max(1.0) => prev.1 |= flag,
            _ => merged.push((t, flag)),
        }
    }
    if let Some(last) = merged.last_mut() {
        last.0 = t_out;
    }

    let jobs = batches(cfg);
    let results: Vec<BatchResult> = jobs
        .par_iter()
        .map(|b| run_batch(traj, cfg, b, &in_spec, &merged))
        .collect::<Result<_>>()?;

    let mut stats = StepStats::default();
    let mut evolved: Vec<Option<StateColumn>> = vec![None; cfg.cutoff];
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    for (idx, r) in results.into_iter().enumerate() {
        if idx == 0 {
            stats = r.stats;
            checkpoints = r.checkpoints;
        } else {
            stats.merge(&r.stats);
            for (acc, cp) in checkpoints.iter_mut().zip(&r.checkpoints) {
                acc.merge(cp);
            }
        }
        for (mode, col) in r.columns {
            evolved[mode - 1] = Some(col);
        }
    }
    let evolved: Vec<StateColumn> = evolved
        .into_iter()
        .map(|c| c.ok_or_else(|| Error::Shape("a basis column was not evolved".into())))
        .collect::<Result<_>>()?;
    let pair = extract(&evolved, in_spec, out_spec)?;
    Ok(SimulationOutput {
        pair,
        stats,
        window: (t_in, t_out),
        residual_speed,
        checkpoints,
    })
}
