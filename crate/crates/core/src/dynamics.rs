//! Coupled equations of motion of the cavity modes.
//!
//! With `L = g - f` and the sine-mode decomposition, mode `n` couples to every
//! other mode `m` through
//!
//! ```text
//! c[n][m] = 2·mn/(m² - n²) · [ (ḟ/L)((-1)^(n+m) - 1) + (L̇/L)(-1)^(n+m) ],   c[n][n] = 0
//! φ̇ₙ = πₙ/L - (L̇/2L) φₙ + Σₘ c[n][m] φₘ
//! π̇ₙ = -(nπ)² φₙ/L + (L̇/2L) πₙ + Σₘ c[n][m] πₘ
//! ```
//!
//! The π equation is written with `nm/(m² - n²)`, which is the same matrix; the
//! coupling is antisymmetric so the truncated system stays Hamiltonian.

use std::f64::consts::PI;

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{BoundaryMotion, BoundaryState};

/// One complexified solution: mode amplitudes and momenta at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateColumn {
    pub t: f64,
    pub phi: Vec<Complex64>,
    pub pi: Vec<Complex64>,
}

impl StateColumn {
    pub fn zeros(t: f64, cutoff: usize) -> Self {
        StateColumn {
            t,
            phi: vec![Complex64::new(0.0, 0.0); cutoff],
            pi: vec![Complex64::new(0.0, 0.0); cutoff],
        }
    }

    pub fn cutoff(&self) -> usize {
        self.phi.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.phi.len() != self.pi.len() {
            return Err(Error::Shape(format!(
                "column has {} amplitudes but {} momenta",
                self.phi.len(),
                self.pi.len()
            )));
        }
        Ok(())
    }

    pub fn conj(&self) -> Self {
        StateColumn {
            t: self.t,
            phi: self.phi.iter().map(|z| z.conj()).collect(),
            pi: self.pi.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, a: Complex64) -> Self {
        StateColumn {
            t: self.t,
            phi: self.phi.iter().map(|z| z * a).collect(),
            pi: self.pi.iter().map(|z| z * a).collect(),
        }
    }

    /// `self + a·other`, keeping `self.t`.
    pub fn add_scaled(&self, a: Complex64, other: &StateColumn) -> Self {
        StateColumn {
            t: self.t,
            phi: self.phi.iter().zip(&other.phi).map(|(x, y)| x + a * y).collect(),
            pi: self.pi.iter().zip(&other.pi).map(|(x, y)| x + a * y).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.iter().chain(&self.pi).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Dense inter-mode coupling at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub t: f64,
    pub entries: Array2<f64>,
}

fn mode_factor(n: usize, m: usize) -> f64 {
    if n == m {
        0.0
    } else {
        let (n, m) = (n as f64, m as f64);
        2.0 * m * n / (m * m - n * n)
    }
}

/// The two possible values of the bracket, indexed by the parity of `n + m`.
fn parity_brackets(b: &BoundaryState) -> (f64, f64) {
    let even = b.ldot / b.length;
    let odd = -(2.0 * b.fdot + b.ldot) / b.length;
    (even, odd)
}

fn check_length(t: f64, b: &BoundaryState) -> Result<()> {
    if b.length > 0.0 && b.length.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateCavity { t, length: b.length })
    }
}

/// Coupling matrix for modes `1..=cutoff` from boundary data.
pub fn coupling_from_boundaries(t: f64, b: &BoundaryState, cutoff: usize) -> Result<CouplingMatrix> {
    if cutoff == 0 {
        return Err(Error::invalid("cutoff", "must be at least 1"));
    }
    check_length(t, b)?;
    let (even, odd) = parity_brackets(b);
    let entries = Array2::from_shape_fn((cutoff, cutoff), |(i, j)| {
        let (n, m) = (i + 1, j + 1);
        let bracket = if (n + m) % 2 == 0 { even } else { odd };
        mode_factor(n, m) * bracket
    });
    Ok(CouplingMatrix { t, entries })
}

pub fn coupling_matrix<M: BoundaryMotion + ?Sized>(traj: &M, t: f64, cutoff: usize) -> Result<CouplingMatrix> {
    coupling_from_boundaries(t, &traj.boundaries(t), cutoff)
}

/// Time derivative of a single column. The returned column holds `(φ̇, π̇)`.
pub fn rhs<M: BoundaryMotion + ?Sized>(traj: &M, col: &StateColumn) -> Result<StateColumn> {
    col.check()?;
    let n_modes = col.cutoff();
    let b = traj.boundaries(col.t);
    let c = coupling_from_boundaries(col.t, &b, n_modes)?.entries;
    let a = 0.5 * b.ldot / b.length;
    let mut out = StateColumn::zeros(col.t, n_modes);
    for i in 0..n_modes {
        let omega = PI * (i + 1) as f64;
        let mut sum_phi = Complex64::new(0.0, 0.0);
        let mut sum_pi = Complex64::new(0.0, 0.0);
        for j in 0..n_modes {
            let cij = c[[i, j]];
            sum_phi += cij * col.phi[j];
            sum_pi += cij * col.pi[j];
        }
        out.phi[i] = col.pi[i] / b.length - a * col.phi[i] + sum_phi;
        out.pi[i] = -omega * omega * col.phi[i] / b.length + a * col.pi[i] + sum_pi;
    }
    Ok(out)
}

/// Conjugate momenta from amplitudes and their time derivatives.
pub fn momentum_from_velocity<M: BoundaryMotion + ?Sized>(
    traj: &M,
    t: f64,
    phi: &[Complex64],
    phidot: &[Complex64],
) -> Result<Vec<Complex64>> {
    if phi.len() != phidot.len() {
        return Err(Error::Shape(format!(
            "{} amplitudes but {} velocities",
            phi.len(),
            phidot.len()
        )));
    }
    let n_modes = phi.len();
    let b = traj.boundaries(t);
    let c = coupling_from_boundaries(t, &b, n_modes.max(1))?.entries;
    Ok((0..n_modes)
        .map(|i| {
            let coupled: Complex64 = (0..n_modes).map(|j| c[[i, j]] * phi[j]).sum();
            b.length * phidot[i] + 0.5 * b.ldot * phi[i] - b.length * coupled
        })
        .collect())
}

/// Static quadratic energy `Σ (|πₙ|² + (nπ)²|φₙ|²) / (2L)`.
pub fn mode_energy<M: BoundaryMotion + ?Sized>(traj: &M, t: f64, col: &StateColumn) -> f64 {
    let length = traj.boundaries(t).length;
    col.phi
        .iter()
        .zip(&col.pi)
        .enumerate()
        .map(|(i, (p, q))| {
            let omega = PI * (i + 1) as f64;
            (q.norm_sqr() + omega * omega * p.norm_sqr()) / (2.0 * length)
        })
        .sum()
}

/// Real `2N × 2N` generator acting on `(φ, π)` for real states, for structural checks.
pub fn generator(b: &BoundaryState, t: f64, cutoff: usize) -> Result<Array2<f64>> {
    let c = coupling_from_boundaries(t, b, cutoff)?.entries;
    let a = 0.5 * b.ldot / b.length;
    let n = cutoff;
    let mut gen = Array2::zeros((2 * n, 2 * n));
    for i in 0..n {
        let omega = PI * (i + 1) as f64;
        for j in 0..n {
            gen[[i, j]] = c[[i, j]];
            gen[[n + i, n + j]] = c[[i, j]];
        }
        gen[[i, i]] -= a;
        gen[[i, n + i]] = 1.0 / b.length;
        gen[[n + i, i]] = -omega * omega / b.length;
        gen[[n + i, n + i]] += a;
    }
    Ok(gen)
}

/// Batched evolution of many columns over a fixed set of modes.
///
/// State layout: `[Φ | Π]`, each a row-major `modes × 2K` real matrix whose
/// column `2k + r` holds the real (`r = 0`) or imaginary (`r = 1`) part of
/// column `k`. One matrix product per block advances all columns at once.
pub struct ModeSystem<'a, M: BoundaryMotion + ?Sized> {
    traj: &'a M,
    modes: Vec<usize>,
    columns: usize,
    factors: Array2<f64>,
    even_parity: Array2<bool>,
    coupling: Array2<f64>,
    rhs_evals: usize,
}

impl<'a, M: BoundaryMotion + ?Sized> ModeSystem<'a, M> {
    /// `modes` are 1-based mode numbers; `columns` is the number of solutions carried.
    pub fn new(traj: &'a M, modes: Vec<usize>, columns: usize) -> Result<Self> {
        if modes.is_empty() || modes.contains(&0) {
            return Err(Error::invalid("modes", "mode numbers start at 1 and the set must be non-empty"));
        }
        let k = modes.len();
        let factors = Array2::from_shape_fn((k, k), |(i, j)| mode_factor(modes[i], modes[j]));
        let even_parity = Array2::from_shape_fn((k, k), |(i, j)| (modes[i] + modes[j]) % 2 == 0);
        Ok(ModeSystem {
            traj,
            modes,
            columns,
            factors,
            even_parity,
            coupling: Array2::zeros((k, k)),
            rhs_evals: 0,
        })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    /// Length of the flat real state vector.
    pub fn dim(&self) -> usize {
        4 * self.modes.len() * self.columns
    }

    pub fn rhs_evals(&self) -> usize {
        self.rhs_evals
    }

    fn block_len(&self) -> usize {
        2 * self.modes.len() * self.columns
    }

    /// Writes the complex column `k` into the flat state.
    pub fn pack_column(&self, k: usize, col: &StateColumn, state: &mut [f64]) {
        let width = 2 * self.columns;
        let off = self.block_len();
        for (row, &mode) in self.modes.iter().enumerate() {
            let p = col.phi[mode - 1];
            let q = col.pi[mode - 1];
            state[row * width + 2 * k] = p.re;
            state[row * width + 2 * k + 1] = p.im;
            state[off + row * width + 2 * k] = q.re;
            state[off + row * width + 2 * k + 1] = q.im;
        }
    }

    /// Reads column `k` back into a full-cutoff column (modes outside the set are zero).
    pub fn unpack_column(&self, k: usize, t: f64, cutoff: usize, state: &[f64]) -> StateColumn {
        let width = 2 * self.columns;
        let off = self.block_len();
        let mut col = StateColumn::zeros(t, cutoff);
        for (row, &mode) in self.modes.iter().enumerate() {
            col.phi[mode - 1] = Complex64::new(state[row * width + 2 * k], state[row * width + 2 * k + 1]);
            col.pi[mode - 1] = Complex64::new(
                state[off + row * width + 2 * k],
                state[off + row * width + 2 * k + 1],
            );
        }
        col
    }

    /// `dy = F(t, y)` for the whole batch.
    pub fn derivative(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.rhs_evals += 1;
        let b = self.traj.boundaries(t);
        check_length(t, &b)?;
        let (even, odd) = parity_brackets(&b);
        ndarray::Zip::from(&mut self.coupling)
            .and(&self.factors)
            .and(&self.even_parity)
            .for_each(|c, &fac, &is_even| *c = fac * if is_even { even } else { odd });

        let rows = self.modes.len();
        let width = 2 * self.columns;
        let half = self.block_len();
        let (phi, pi) = y.split_at(half);
        let (dphi, dpi) = dy.split_at_mut(half);
        let phi_v = ArrayView2::from_shape((rows, width), phi).expect("state layout");
        let pi_v = ArrayView2::from_shape((rows, width), pi).expect("state layout");
        let mut dphi_v = ArrayViewMut2::from_shape((rows, width), dphi).expect("state layout");
        let mut dpi_v = ArrayViewMut2::from_shape((rows, width), dpi).expect("state layout");
        general_mat_mul(1.0, &self.coupling, &phi_v, 0.0, &mut dphi_v);
        general_mat_mul(1.0, &self.coupling, &pi_v, 0.0, &mut dpi_v);

        let inv_len = 1.0 / b.length;
        let a = 0.5 * b.ldot * inv_len;
        for (row, &mode) in self.modes.iter().enumerate() {
            let omega = PI * mode as f64;
            let w2 = omega * omega * inv_len;
            let range = row * width..(row + 1) * width;
            let (p, q) = (&phi[range.clone()], &pi[range.clone()]);
            let (dp, dq) = (&mut dphi[range.clone()], &mut dpi[range]);
            for c in 0..width {
                dp[c] += q[c] * inv_len - a * p[c];
                dq[c] += a * q[c] - w2 * p[c];
            }
        }
        Ok(())
    }
}
