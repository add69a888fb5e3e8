//! Static-cavity bases, the Klein–Gordon product and Bogoliubov coefficients.
//!
//! A positive-frequency basis column of a static cavity of length `L` is
//! `φₙ = δₙᵢ (Lωᵢ)^(-1/2) e^(-iωᵢ(t - t_ref))`, `πₙ = -i δₙᵢ (Lωᵢ)^(1/2) e^(-iωᵢ(t - t_ref))`
//! with `ωᵢ = πI/L`; it has unit norm under `⟨a, b⟩ = (i/2) Σ (āφ b_π - āπ b_φ)`.
//! An evolved in-basis column expands as `u⁽ᴵ⁾ = Σ_J α_IJ w⁽ᴶ⁾ + β_IJ w̄⁽ᴶ⁾`.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::StateColumn;
use crate::error::{Error, Result};

const I_UNIT: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Default magnitude cap for iterated cycles.
pub const DEFAULT_INSTABILITY_CAP: f64 = 1e12;

/// Static basis of a cavity of length `length`, phases referenced to `t_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub length: f64,
    pub t_ref: f64,
    pub cutoff: usize,
}

impl BasisSpec {
    pub fn new(length: f64, t_ref: f64, cutoff: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::invalid("length", format!("{length} is not a positive length")));
        }
        if !t_ref.is_finite() {
            return Err(Error::invalid("t_ref", "must be finite"));
        }
        if cutoff == 0 {
            return Err(Error::invalid("cutoff", "must be at least 1"));
        }
        Ok(BasisSpec { length, t_ref, cutoff })
    }

    pub fn omega(&self, mode: usize) -> f64 {
        PI * mode as f64 / self.length
    }

    pub fn gap(&self) -> f64 {
        PI / self.length
    }

    /// Same cavity and cutoff; phase reference may differ.
    pub fn same_cavity(&self, other: &BasisSpec) -> bool {
        self.cutoff == other.cutoff && (self.length - other.length).abs() <= 1e-12 * self.length.max(1.0)
    }

    fn shifted(&self, dt: f64) -> BasisSpec {
        BasisSpec {
            t_ref: self.t_ref + dt,
            ..*self
        }
    }
}

/// Positive-frequency basis column `mode` (1-based) evaluated at time `t`.
pub fn static_basis_column(spec: &BasisSpec, mode: usize, t: f64) -> Result<StateColumn> {
    if mode == 0 || mode > spec.cutoff {
        return Err(Error::IndexOutOfRange {
            index: mode,
            cutoff: spec.cutoff,
        });
    }
    let omega = spec.omega(mode);
    let amp = (spec.length * omega).sqrt();
    let phase = Complex64::from_polar(1.0, -omega * (t - spec.t_ref));
    let mut col = StateColumn::zeros(t, spec.cutoff);
    col.phi[mode - 1] = phase / amp;
    col.pi[mode - 1] = -I_UNIT * amp * phase;
    Ok(col)
}

/// Klein–Gordon product of two columns at the same time.
pub fn kg_product(a: &StateColumn, b: &StateColumn) -> Result<Complex64> {
    a.check()?;
    b.check()?;
    if a.cutoff() != b.cutoff() {
        return Err(Error::Shape(format!(
            "cutoffs differ: {} vs {}",
            a.cutoff(),
            b.cutoff()
        )));
    }
    if (a.t - b.t).abs() > 1e-12 * a.t.abs().max(1.0) {
        return Err(Error::Shape(format!("columns live at different times {} and {}", a.t, b.t)));
    }
    let sum: Complex64 = a
        .phi
        .iter()
        .zip(&a.pi)
        .zip(b.phi.iter().zip(&b.pi))
        .map(|((ap, aq), (bp, bq))| ap.conj() * bq - aq.conj() * bp)
        .sum();
    Ok(0.5 * I_UNIT * sum)
}

/// Bogoliubov transformation from an in basis to an out basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BogoliubovPair {
    pub alpha: Array2<Complex64>,
    pub beta: Array2<Complex64>,
    pub in_spec: BasisSpec,
    pub out_spec: BasisSpec,
}

fn conj(m: &Array2<Complex64>) -> Array2<Complex64> {
    m.mapv(|z| z.conj())
}

fn max_abs(m: &Array2<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl BogoliubovPair {
    pub fn identity(spec: BasisSpec) -> Self {
        let n = spec.cutoff;
        BogoliubovPair {
            alpha: Array2::from_shape_fn((n, n), |(i, j)| {
                if i == j {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
            beta: Array2::zeros((n, n)),
            in_spec: spec,
            out_spec: spec,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn max_abs_alpha(&self) -> f64 {
        max_abs(&self.alpha)
    }

    pub fn max_abs_beta(&self) -> f64 {
        max_abs(&self.beta)
    }

    /// Re-expresses the coefficients in the out basis with phase reference `t_ref`.
    pub fn rephase_out(&self, t_ref: f64) -> Self {
        let dt = t_ref - self.out_spec.t_ref;
        let phases: Vec<Complex64> = (1..=self.cutoff())
            .map(|j| Complex64::from_polar(1.0, -self.out_spec.omega(j) * dt))
            .collect();
        let mut out = self.clone();
        for ((_, j), z) in out.alpha.indexed_iter_mut() {
            *z *= phases[j];
        }
        for ((_, j), z) in out.beta.indexed_iter_mut() {
            *z *= phases[j].conj();
        }
        out.out_spec.t_ref = t_ref;
        out
    }

    /// The same transformation for the motion delayed by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        BogoliubovPair {
            in_spec: self.in_spec.shifted(dt),
            out_spec: self.out_spec.shifted(dt),
            ..self.clone()
        }
    }
}

/// Coefficients from in-basis columns evolved to `t_out`, against the out basis `out_spec`.
///
/// `evolved[I - 1]` must hold the evolution of in-basis column `I`.
pub fn extract(evolved: &[StateColumn], in_spec: BasisSpec, out_spec: BasisSpec) -> Result<BogoliubovPair> {
    let n = out_spec.cutoff;
    if evolved.len() != in_spec.cutoff || in_spec.cutoff != n {
        return Err(Error::Shape(format!(
            "{} evolved columns for in cutoff {} and out cutoff {n}",
            evolved.len(),
            in_spec.cutoff
        )));
    }
    let t_out = evolved.first().map(|c| c.t).unwrap_or(out_spec.t_ref);
    let out_basis: Vec<StateColumn> = (1..=n)
        .map(|j| static_basis_column(&out_spec, j, t_out))
        .collect::<Result<_>>()?;
    let mut alpha = Array2::zeros((n, n));
    let mut beta = Array2::zeros((n, n));
    for (i, u) in evolved.iter().enumerate() {
        if u.cutoff() != n || (u.t - t_out).abs() > 1e-12 * t_out.abs().max(1.0) {
            return Err(Error::Shape(format!("column {} does not match cutoff/time", i + 1)));
        }
        for (j, w) in out_basis.iter().enumerate() {
            // w has a single non-zero mode, so the product reduces to one term.
            let (wp, wq) = (w.phi[j], w.pi[j]);
            let (up, uq) = (u.phi[j], u.pi[j]);
            alpha[[i, j]] = 0.5 * I_UNIT * (wp.conj() * uq - wq.conj() * up);
            beta[[i, j]] = -0.5 * I_UNIT * (wp * uq - wq * up);
        }
    }
    Ok(BogoliubovPair {
        alpha,
        beta,
        in_spec,
        out_spec,
    })
}

/// Residuals of `αα† - ββ† = 1` and `αβᵀ - βαᵀ = 0`, entrywise in modulus.
pub fn identity_residuals(pair: &BogoliubovPair) -> (Array2<f64>, Array2<f64>) {
    let (a, b) = (&pair.alpha, &pair.beta);
    let a_h = conj(a).reversed_axes();
    let b_h = conj(b).reversed_axes();
    let first = a.dot(&a_h) - b.dot(&b_h);
    let second = a.dot(&b.t()) - b.dot(&a.t());
    let r1 = Array2::from_shape_fn(first.dim(), |(i, j)| {
        let delta = if i == j { 1.0 } else { 0.0 };
        (first[[i, j]] - delta).norm()
    });
    let r2 = second.mapv(|z| z.norm());
    (r1, r2)
}

/// Largest entry of a residual matrix over indices `I, J ≤ limit`.
pub fn max_residual(r: &Array2<f64>, limit: usize) -> f64 {
    let k = limit.min(r.nrows());
    r.slice(ndarray::s![..k, ..k]).iter().fold(0.0, |m, &x| m.max(x))
}

/// Out basis expressed in the in basis: `σ_IJ = conj(α_JI)`, `λ_IJ = -β_JI`.
pub fn time_reverse_pair(pair: &BogoliubovPair) -> BogoliubovPair {
    BogoliubovPair {
        alpha: conj(&pair.alpha).reversed_axes(),
        beta: pair.beta.t().mapv(|z| -z),
        in_spec: pair.out_spec,
        out_spec: pair.in_spec,
    }
}

/// Chains `first` (in → aux) with `second` (aux → out).
///
/// The aux bases must describe the same cavity; a different phase reference
/// is absorbed by rephasing `first`.
pub fn compose(first: &BogoliubovPair, second: &BogoliubovPair) -> Result<BogoliubovPair> {
    if !first.out_spec.same_cavity(&second.in_spec) {
        return Err(Error::BasisMismatch(format!(
            "out basis (L = {}, N = {}) differs from next in basis (L = {}, N = {})",
            first.out_spec.length, first.out_spec.cutoff, second.in_spec.length, second.in_spec.cutoff
        )));
    }
    let first = if first.out_spec.t_ref == second.in_spec.t_ref {
        first.clone()
    } else {
        first.rephase_out(second.in_spec.t_ref)
    };
    let (gamma, rho) = (&second.alpha, &second.beta);
    let alpha = first.alpha.dot(gamma) + first.beta.dot(&conj(rho));
    let beta = first.alpha.dot(rho) + first.beta.dot(&conj(gamma));
    Ok(BogoliubovPair {
        alpha,
        beta,
        in_spec: first.in_spec,
        out_spec: second.out_spec,
    })
}

/// Collapse leg that retraces an expansion leg backwards in time, played right
/// after it: `γ_IJ = α_JI`, `ρ_IJ = -conj(β_JI)`.
pub fn return_leg(pair: &BogoliubovPair) -> BogoliubovPair {
    let t_mirror = pair.out_spec.t_ref;
    BogoliubovPair {
        alpha: pair.alpha.t().to_owned(),
        beta: conj(&pair.beta).reversed_axes().mapv(|z| -z),
        in_spec: pair.out_spec,
        out_spec: BasisSpec {
            t_ref: 2.0 * t_mirror - pair.in_spec.t_ref,
            ..pair.in_spec
        },
    }
}

/// One full expand–collapse cycle built from the expansion leg alone.
pub fn cycle(pair: &BogoliubovPair) -> BogoliubovPair {
    compose(pair, &return_leg(pair)).expect("return leg starts in the expansion's out basis")
}

fn check_cycle(pair: &BogoliubovPair) -> Result<()> {
    if !pair.in_spec.same_cavity(&pair.out_spec) {
        return Err(Error::BasisMismatch(format!(
            "a cycle must end in the cavity it starts from (L_in = {}, L_out = {})",
            pair.in_spec.length, pair.out_spec.length
        )));
    }
    Ok(())
}

/// Pairs for cycles `1..=n`, repeating `cycle_pair` back to back.
///
/// Stops early if any coefficient exceeds `cap`; the error names the cycle.
pub fn cycle_sequence(cycle_pair: &BogoliubovPair, n: usize, cap: f64) -> (Vec<BogoliubovPair>, Option<Error>) {
    if n == 0 {
        return (Vec::new(), Some(Error::invalid("n", "need at least one cycle")));
    }
    if let Err(e) = check_cycle(cycle_pair) {
        return (Vec::new(), Some(e));
    }
    let period = cycle_pair.out_spec.t_ref - cycle_pair.in_spec.t_ref;
    let mut out = vec![cycle_pair.clone()];
    for k in 1..n {
        let next = cycle_pair.shifted(k as f64 * period);
        let total = match compose(&out[k - 1], &next) {
            Ok(p) => p,
            Err(e) => return (out, Some(e)),
        };
        let magnitude = total.max_abs_alpha().max(total.max_abs_beta());
        if !(magnitude <= cap) {
            return (
                out,
                Some(Error::Instability {
                    cycle: k + 1,
                    magnitude,
                    cap,
                }),
            );
        }
        out.push(total);
    }
    (out, None)
}

/// Total transformation after `n` cycles.
pub fn iterate_cycles(cycle_pair: &BogoliubovPair, n: usize) -> Result<BogoliubovPair> {
    iterate_cycles_capped(cycle_pair, n, DEFAULT_INSTABILITY_CAP)
}

pub fn iterate_cycles_capped(cycle_pair: &BogoliubovPair, n: usize, cap: f64) -> Result<BogoliubovPair> {
    let (mut pairs, err) = cycle_sequence(cycle_pair, n, cap);
    match err {
        Some(e) => Err(e),
        None => Ok(pairs.pop().expect("n ≥ 1 cycles")),
    }
}
