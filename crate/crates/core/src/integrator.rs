//! Adaptive embedded Runge–Kutta integration (Prince–Dormand, 13 stages).
//!
//! The propagated solution is eighth order; the embedded seventh-order
//! solution supplies the local error estimate. Coefficients are the
//! double-precision values used by the GSL `rk8pd` stepper.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STAGES: usize = 13;

/// Stage nodes.
const C: [f64; STAGES] = [
    0.0,
    0.055555555555555552,
    0.083333333333333329,
    0.125,
    0.3125,
    0.375,
    0.14749999999999999,
    0.46500000000000002,
    0.56486545138225952,
    0.65000000000000002,
    0.9246562776405044,
    1.0,
    1.0,
];

/// Lower-triangular stage matrix, row `i` uses stages `0..i`.
const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [0.055555555555555552, 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
    [0.020833333333333332, 0.0625, 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
    [0.03125, 0., 0.09375, 0., 0., 0., 0., 0., 0., 0., 0., 0.],
    [0.3125, 0., -1.171875, 1.171875, 0., 0., 0., 0., 0., 0., 0., 0.],
    [0.037499999999999999, 0., 0., 0.1875, 0.14999999999999999, 0., 0., 0., 0., 0., 0., 0.],
    [
        0.047910137111111112, 0., 0., 0.11224871277777777, -0.025505673777777779,
        0.012846823888888888, 0., 0., 0., 0., 0., 0.,
    ],
    [
        0.016917989787292281, 0., 0., 0.3878482784860432, 0.035977369851500331,
        0.19697021421566607, -0.17271385234050185, 0., 0., 0., 0., 0.,
    ],
    [
        0.069095753359192297, 0., 0., -0.63424797672885413, -0.16119757522460407,
        0.13865030945882525, 0.94092861403575623, 0.21163632648194397, 0., 0., 0., 0.,
    ],
    [
        0.18355699683904539, 0., 0., -2.4687680843155926, -0.29128688781630047,
        -0.026473020233117376, 2.8478387641928005, 0.28138733146984979, 0.12374489986331466,
        0., 0., 0.,
    ],
    [
        -1.2154248173958881, 0., 0., 16.672608665945774, 0.91574182841681795,
        -6.0566058043574706, -16.00357359415618, 14.849303086297663, -13.371575735289849,
        5.134182648179638, 0., 0.,
    ],
    [
        0.25886091643826425, 0., 0., -4.7744857854892047, -0.43509301377703252,
        -3.0494833320722416, 5.5779200399360995, 6.1558315898610401, -5.0621045867369387,
        2.193926173180679, 0.13462799865933495, 0.,
    ],
    [
        0.82242759962650747, 0., 0., -11.658673257277664, -0.75762211669093615,
        0.71397358815958156, 12.075774986890057, -2.1276591139204029, 1.9901662070489554,
        -0.23428647154404028, 0.17589857770794226, 0.,
    ],
];

/// Eighth-order weights.
const B: [f64; STAGES] = [
    0.041747491141530244,
    0.,
    0.,
    0.,
    0.,
    -0.055452328611239311,
    0.23931280720118009,
    0.70351066940344298,
    -0.75975961381446089,
    0.6605630309222863,
    0.15818748251012332,
    -0.23810953875286281,
    0.25,
];

/// Difference between the eighth- and seventh-order weights.
const E: [f64; STAGES] = [
    -0.012194277465176744,
    0.,
    0.,
    0.,
    0.,
    -0.77315394787655778,
    0.07192809284993823,
    1.7638345211964439,
    -1.7871820380274479,
    0.78298555275448889,
    -0.078771886628996035,
    0.28255398319730723,
    -0.25,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
/// PI controller exponents for an error estimate of order 8.
const ALPHA: f64 = 0.7 / 8.0;
const BETA: f64 = 0.4 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            abs_tol: 1e-11,
            rel_tol: 0.0,
            max_steps: 2_000_000,
        }
    }
}

impl Tolerances {
    pub fn with_abs(abs_tol: f64) -> Self {
        Tolerances {
            abs_tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !self.abs_tol.is_finite() {
            return Err(Error::invalid("abs_tol", "must be a finite positive value"));
        }
        if !(self.rel_tol >= 0.0) || !self.rel_tol.is_finite() {
            return Err(Error::invalid("rel_tol", "must be finite and ≥ 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for StepStats {
    fn default() -> Self {
        StepStats {
            steps_accepted: 0,
            steps_rejected: 0,
            rhs_evals: 0,
            min_step: f64::INFINITY,
            max_step: 0.0,
        }
    }
}

impl StepStats {
    pub fn merge(&mut self, other: &StepStats) {
        self.steps_accepted += other.steps_accepted;
        self.steps_rejected += other.steps_rejected;
        self.rhs_evals += other.rhs_evals;
        self.min_step = self.min_step.min(other.min_step);
        self.max_step = self.max_step.max(other.max_step);
    }
}

/// Adaptive stepper with per-call scratch space. The step size carries over
/// between successive [`Integrator::advance`] calls.
pub struct Integrator {
    tol: Tolerances,
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    h: Option<f64>,
    err_prev: f64,
    stats: StepStats,
}

impl Integrator {
    pub fn new(dim: usize, tol: Tolerances) -> Result<Self> {
        tol.validate()?;
        Ok(Integrator {
            tol,
            k: vec![vec![0.0; dim]; STAGES],
            stage: vec![0.0; dim],
            y_new: vec![0.0; dim],
            err: vec![0.0; dim],
            h: None,
            err_prev: 1e-4,
            stats: StepStats::default(),
        })
    }

    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// One trial step of size `h`; leaves the candidate in `y_new` and the error vector in `err`.
    fn try_step<F>(&mut self, rhs: &mut F, t: f64, h: f64, y: &[f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let dim = y.len();
        for i in 0..STAGES {
            self.stage.copy_from_slice(y);
            for (j, &a) in A[i][..i].iter().enumerate() {
                if a != 0.0 {
                    let ha = h * a;
                    let kj = &self.k[j];
                    for (s, &kv) in self.stage.iter_mut().zip(kj) {
                        *s += ha * kv;
                    }
                }
            }
            let (stage, k) = (&self.stage, &mut self.k[i]);
            rhs(t + C[i] * h, stage, k)?;
            self.stats.rhs_evals += 1;
        }
        self.y_new.copy_from_slice(y);
        self.err.iter_mut().for_each(|e| *e = 0.0);
        for i in 0..STAGES {
            let (hb, he) = (h * B[i], h * E[i]);
            if hb == 0.0 && he == 0.0 {
                continue;
            }
            let ki = &self.k[i];
            for idx in 0..dim {
                self.y_new[idx] += hb * ki[idx];
                self.err[idx] += he * ki[idx];
            }
        }
        Ok(())
    }

    fn error_norm(&self, y: &[f64]) -> f64 {
        let mut norm: f64 = 0.0;
        for ((e, y0), y1) in self.err.iter().zip(y).zip(&self.y_new) {
            let scale = self.tol.abs_tol + self.tol.rel_tol * y0.abs().max(y1.abs());
            let r = e.abs() / scale;
            if r.is_nan() {
                return f64::NAN;
            }
            norm = norm.max(r);
        }
        norm
    }

    /// Advances `y` from `t_a` to exactly `t_b`.
    pub fn advance<F>(&mut self, rhs: &mut F, t_a: f64, t_b: f64, y: &mut [f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        if !(t_b > t_a) {
            return Err(Error::invalid("t_span", format!("need t_a < t_b, got [{t_a}, {t_b}]")));
        }
        if let Some(k) = first_non_finite(y) {
            return Err(Error::Divergence { t: t_a, component: Some(k), column: None });
        }
        let span = t_b - t_a;
        let mut h = self.h.unwrap_or(span * 1e-4).min(span);
        let mut t = t_a;
        let mut steps = 0usize;
        loop {
            let remaining = t_b - t;
            let last = h >= remaining;
            let h_try = if last { remaining } else { h };
            if steps >= self.tol.max_steps {
                return Err(Error::NonConvergence { t, steps });
            }
            steps += 1;
            self.try_step(rhs, t, h_try, y)?;
            let err = self.error_norm(y);
            if !err.is_finite() {
                return Err(Error::Divergence { t, component: first_non_finite(&self.y_new), column: None });
            }
            if err <= 1.0 {
                y.copy_from_slice(&self.y_new);
                if let Some(k) = first_non_finite(y) {
                    return Err(Error::Divergence { t: t + h_try, component: Some(k), column: None });
                }
                self.stats.steps_accepted += 1;
                self.stats.min_step = self.stats.min_step.min(h_try);
                self.stats.max_step = self.stats.max_step.max(h_try);
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-ALPHA) * self.err_prev.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                self.err_prev = err.max(1e-4);
                if last {
                    // Keep the controller's proposal rather than the truncated final step.
                    self.h = Some(if h_try < h { h } else { h_try * factor });
                    return Ok(());
                }
                t += h_try;
                h = h_try * factor;
            } else {
                self.stats.steps_rejected += 1;
                h = h_try * (SAFETY * err.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, 1.0);
                if h <= f64::EPSILON * t.abs().max(span) {
                    return Err(Error::NonConvergence { t, steps });
                }
            }
        }
    }
}

fn first_non_finite(y: &[f64]) -> Option<usize> {
    y.iter().position(|v| !v.is_finite())
}

/// Integrates `y` over `t_span` with adaptive steps.
pub fn integrate<F>(mut rhs: F, t_span: (f64, f64), y: &mut [f64], tol: Tolerances) -> Result<StepStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut integ = Integrator::new(y.len(), tol)?;
    integ.advance(&mut rhs, t_span.0, t_span.1, y)?;
    Ok(integ.stats())
}

/// Integrates through each time in `stops` (ascending, after `t_start`), calling
/// `at_stop(index, t, y)` on arrival.
pub fn integrate_through<F, G>(
    mut rhs: F,
    t_start: f64,
    stops: &[f64],
    y: &mut [f64],
    tol: Tolerances,
    mut at_stop: G,
) -> Result<StepStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    G: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let mut integ = Integrator::new(y.len(), tol)?;
    let mut t = t_start;
    for (i, &stop) in stops.iter().enumerate() {
        if stop > t {
            integ.advance(&mut rhs, t, stop, y)?;
            t = stop;
        }
        at_stop(i, t, y)?;
    }
    Ok(integ.stats())
}

/// Fixed-step eighth-order integration with `steps` equal steps.
pub fn integrate_fixed<F>(mut rhs: F, t_span: (f64, f64), y: &mut [f64], steps: usize) -> Result<StepStats>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if steps == 0 {
        return Err(Error::invalid("steps", "must be positive"));
    }
    let mut integ = Integrator::new(y.len(), Tolerances::default())?;
    let h = (t_span.1 - t_span.0) / steps as f64;
    for s in 0..steps {
        let t = t_span.0 + s as f64 * h;
        integ.try_step(&mut rhs, t, h, y)?;
        y.copy_from_slice(&integ.y_new);
        integ.stats.steps_accepted += 1;
    }
    integ.stats.min_step = h;
    integ.stats.max_step = h;
    Ok(integ.stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tableau_is_consistent() {
        for i in 0..STAGES {
            let row: f64 = A[i][..i].iter().sum();
            assert!((row - C[i]).abs() < 1e-14, "row {i}: {row} vs {}", C[i]);
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(E.iter().sum::<f64>().abs() < 1e-14);
        // Quadrature conditions Σ b c^k = 1/(k+1) up to order 8.
        for k in 0..8 {
            let q: f64 = B.iter().zip(&C).map(|(b, c)| b * c.powi(k)).sum();
            assert!((q - 1.0 / (k + 1) as f64).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn exponential_decay() {
        let mut y = [1.0];
        integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            (0.0, 1.0),
            &mut y,
            Tolerances::with_abs(1e-11),
        )
        .unwrap();
        assert!((y[0] - (-1f64).exp()).abs() < 1e-10);
    }

    fn oscillator(omega: f64) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> {
        move |_, y, dy| {
            dy[0] = y[1];
            dy[1] = -omega * omega * y[0];
            Ok(())
        }
    }

    #[test]
    fn oscillator_energy_drift() {
        let omega = 2.0 * std::f64::consts::PI;
        let mut y = [1.0, 0.0];
        integrate(oscillator(omega), (0.0, 100.0), &mut y, Tolerances::with_abs(1e-11)).unwrap();
        let energy = 0.5 * (y[1] * y[1] + omega * omega * y[0] * y[0]);
        let e0 = 0.5 * omega * omega;
        assert!(((energy - e0) / e0).abs() < 1e-8);
    }

    #[test]
    fn tighter_tolerance_never_worse() {
        let omega = 3.0;
        let exact = |t: f64| (omega * t).cos();
        let mut last = f64::INFINITY;
        for tol in [1e-8, 1e-9, 1e-10, 1e-11, 1e-12] {
            let mut y = [1.0, 0.0];
            integrate(oscillator(omega), (0.0, 20.0), &mut y, Tolerances::with_abs(tol)).unwrap();
            let err = (y[0] - exact(20.0)).abs();
            assert!(err <= last * 1.0001 + 1e-15, "tol {tol}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn fixed_step_order_is_eight() {
        let omega = 1.0;
        let run = |steps| {
            let mut y = [1.0, 0.0];
            integrate_fixed(oscillator(omega), (0.0, 10.0), &mut y, steps).unwrap();
            (y[0] - 10f64.cos()).abs()
        };
        let coarse = run(20);
        let fine = run(40);
        assert!(coarse / fine > 2f64.powi(8) * 0.75, "ratio {}", coarse / fine);
    }

    #[test]
    fn deterministic_bits() {
        let go = || {
            let mut y = [0.3, -0.1];
            integrate(oscillator(7.0), (0.0, 3.0), &mut y, Tolerances::default()).unwrap();
            y
        };
        let (a, b) = (go(), go());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn max_steps_is_enforced() {
        let mut y = [1.0, 0.0];
        let tol = Tolerances {
            max_steps: 5,
            ..Tolerances::default()
        };
        let res = integrate(oscillator(50.0), (0.0, 10.0), &mut y, tol);
        assert!(matches!(res, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn blow_up_is_reported() {
        let mut y = [1.0];
        let res = integrate(
            |_, y, dy| {
                dy[0] = if y[0] > 1e300 { f64::NAN } else { y[0] * y[0] };
                Ok(())
            },
            (0.0, 2.0),
            &mut y,
            Tolerances::default(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn stops_land_exactly() {
        let mut seen = Vec::new();
        let mut y = [1.0];
        integrate_through(
            |_, y, dy| {
                dy[0] = -2.0 * y[0];
                Ok(())
            },
            0.0,
            &[0.25, 0.5, 1.0],
            &mut y,
            Tolerances::default(),
            |_, t, y| {
                seen.push((t, y[0]));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen.len(), 3);
        for (t, v) in seen {
            assert_relative_eq!(v, (-2.0 * t).exp(), max_relative = 1e-10);
        }
    }
}
