//! Simulated coefficients against independent constructions.

use std::f64::consts::PI;

use cavity_core::bogoliubov::{compose, return_leg, time_reverse_pair};
use cavity_core::extrapolate::extrapolate_pairs;
use cavity_core::trajectory::concat;
use cavity_core::{simulate, BogoliubovPair, Family, SimulationConfig, TrajectoryParams};
use num_complex::Complex64;

const EPS: f64 = 0.125;
const KAPPA: f64 = 8.0;

fn gentle() -> TrajectoryParams {
    TrajectoryParams::standard(Family::OneMirror, EPS, KAPPA).unwrap()
}

fn run<M: cavity_core::trajectory::BoundaryMotion>(traj: &M, n: usize) -> BogoliubovPair {
    simulate(traj, &SimulationConfig::with_cutoff(n)).unwrap().pair
}

/// Exact one-mirror modes from the ray-tracing function `R` with
/// `R(t + g(t)) = R(t - g(t)) + 2` and `R(v) = v` before the motion.
struct RayTracing {
    traj: TrajectoryParams,
    static_before: f64,
}

impl RayTracing {
    fn g(&self, t: f64) -> (f64, f64) {
        let b = self.traj.eval(t);
        (b.g, b.gdot)
    }

    /// Solves `t + g(t) = v` for the reflection time.
    fn reflection_time(&self, v: f64) -> f64 {
        let (mut lo, mut hi) = (v - 3.0, v);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid + self.g(mid).0 < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `R(v)` and `R'(v)`.
    fn r(&self, mut v: f64) -> (f64, f64) {
        let (mut shift, mut factor) = (0.0, 1.0);
        while v > self.static_before + 1.0 {
            let t = self.reflection_time(v);
            let (g, gdot) = self.g(t);
            factor *= (1.0 - gdot) / (1.0 + gdot);
            shift += 2.0;
            v = t - g;
        }
        (v + shift, factor)
    }

    /// `|α_IJ|²` and `|β_IJ|²` by Klein–Gordon products at `t_f`.
    fn coefficients(&self, t_f: f64, modes_in: &[usize], modes_out: usize) -> Vec<Vec<(f64, f64)>> {
        const M: usize = 8000;
        let length = self.g(t_f).0;
        let xs: Vec<f64> = (0..=M).map(|k| length * k as f64 / M as f64).collect();
        let plus: Vec<(f64, f64)> = xs.iter().map(|x| self.r(t_f + x)).collect();
        let minus: Vec<(f64, f64)> = xs.iter().map(|x| self.r(t_f - x)).collect();
        let wave = |w: f64, c: Complex64, (r, d): (f64, f64)| (c * (-Complex64::i() * w * r).exp(), d);
        let mode_in = |n: usize| -> Vec<(Complex64, Complex64)> {
            let k = PI * n as f64;
            let c = Complex64::i() / (4.0 * PI * n as f64).sqrt();
            plus.iter()
                .zip(&minus)
                .map(|(&p, &m)| {
                    let ((ep, dp), (em, dm)) = (wave(k, c, p), wave(k, c, m));
                    (ep - em, -Complex64::i() * k * (ep * dp - em * dm))
                })
                .collect()
        };
        let mode_out = |j: usize| -> Vec<(Complex64, Complex64)> {
            let w = PI * j as f64 / length;
            let c = Complex64::i() / (4.0 * PI * j as f64).sqrt();
            xs.iter()
                .map(|x| {
                    let (ep, em) = (c * (-Complex64::i() * w * (t_f + x)).exp(), c * (-Complex64::i() * w * (t_f - x)).exp());
                    (ep - em, -Complex64::i() * w * (ep - em))
                })
                .collect()
        };
        let h = length / M as f64;
        let kg = |a: &[(Complex64, Complex64)], b: &[(Complex64, Complex64)]| -> Complex64 {
            let sum: Complex64 = a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(k, ((u, ut), (v, vt)))| {
                    let weight = if k == 0 || k == M { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                    weight * (u.conj() * vt - ut.conj() * v)
                })
                .sum();
            Complex64::i() * sum * h / 3.0
        };
        modes_in
            .iter()
            .map(|&i| {
                let u = mode_in(i);
                (1..=modes_out)
                    .map(|j| {
                        let w = mode_out(j);
                        let wc: Vec<_> = w.iter().map(|(a, b)| (a.conj(), b.conj())).collect();
                        (kg(&w, &u).norm_sqr(), kg(&wc, &u).norm_sqr())
                    })
                    .collect()
            })
            .collect()
    }
}

#[test]
fn ray_tracing_oracle_matches_extrapolated_magnitudes() {
    let traj = gentle();
    let oracle = RayTracing {
        traj,
        static_before: -40.0 / KAPPA,
    };
    let modes = [1, 2, 3, 4];
    let exact = oracle.coefficients(EPS + 40.0 / KAPPA, &modes, 4);
    let pairs: Vec<_> = [32, 64, 128].iter().map(|&n| run(&traj, n)).collect();
    let x = extrapolate_pairs(&pairs).unwrap().magnitudes();
    let (mut err_x, mut err_raw) = (0.0, 0.0);
    for (row, &i) in exact.iter().zip(&modes) {
        for (j0, &(a2, b2)) in row.iter().enumerate() {
            let (sa, sb) = (x.alpha2[[i - 1, j0]], x.beta2[[i - 1, j0]]);
            assert!((sa / a2 - 1.0).abs() < 1e-3, "|α_{i}{}|²: {sa:e} vs exact {a2:e}", j0 + 1);
            assert!((sb / b2 - 1.0).abs() < 1e-2, "|β_{i}{}|²: {sb:e} vs exact {b2:e}", j0 + 1);
            err_x += (sb / b2 - 1.0).abs();
            err_raw += (pairs[2].beta[[i - 1, j0]].norm_sqr() / b2 - 1.0).abs();
        }
    }
    assert!(err_x < 0.5 * err_raw, "extrapolated {err_x:e} vs finest cutoff {err_raw:e}");
}

fn max_diff(a: &BogoliubovPair, b: &BogoliubovPair) -> f64 {
    a.alpha
        .iter()
        .zip(&b.alpha)
        .chain(a.beta.iter().zip(&b.beta))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[test]
fn return_leg_equals_direct_collapse() {
    let traj = gentle();
    let expand = run(&traj, 24);
    let direct = run(&traj.time_reverse(), 24);
    let back = return_leg(&expand);
    let aligned = direct
        .shifted(back.in_spec.t_ref - direct.in_spec.t_ref)
        .rephase_out(back.out_spec.t_ref);
    assert!(max_diff(&aligned, &back) < 1e-9, "{}", max_diff(&aligned, &back));
}

#[test]
fn reversed_pair_moduli_match_direct_collapse() {
    let traj = gentle();
    let reversed = time_reverse_pair(&run(&traj, 24));
    let direct = run(&traj.time_reverse(), 24);
    for (a, b) in reversed.alpha.iter().zip(&direct.alpha).chain(reversed.beta.iter().zip(&direct.beta)) {
        assert!((a.norm() - b.norm()).abs() < 1e-9);
    }
}

#[test]
fn composition_matches_concatenated_motion() {
    let expand = gentle();
    let collapse = TrajectoryParams::standard(Family::OneMirror, EPS, 2.0 * KAPPA)
        .unwrap()
        .time_reverse();
    let whole = concat(expand, collapse, 0.3).unwrap();
    let n = 16;
    let direct = run(&whole, n);
    let first = run(&expand, n);
    let second = run(&collapse, n);
    let shift = whole.segments[1].shift;
    let composed = compose(&first, &second.shifted(shift)).unwrap();
    assert!((composed.out_spec.t_ref - direct.out_spec.t_ref).abs() < 1e-12);
    assert!(max_diff(&composed, &direct) < 1e-7, "{}", max_diff(&composed, &direct));
}
