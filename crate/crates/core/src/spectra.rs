//! Gray-body thermal models for `|β|²` and `|α|²`, least-squares fits in log
//! space, and thermality diagnostics.
//!
//! The `|β|²` model is
//! `N Δω_I Δω_J / (π κ ω_I) · Γ(ω_J) / (e^(2πω_J/κ) - 1)` with the gray-body
//! factor `Γ(ω) = A + B sin²((1 + C) ε ω)`. The `|α|²` model has a resonance at
//! `ω_J = F ω_I` and a different temperature `κ̃` above it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bogoliubov::BasisSpec;
use crate::error::{Error, Result};
use crate::extrapolate::Magnitudes;

/// Default `|β|` floor below which thermality entries are masked.
pub const DEFAULT_FLOOR: f64 = 1e-12;
/// Default pole-exclusion half-width, in units of the out gap.
pub const DEFAULT_POLE_WINDOW: f64 = 2.0;
/// Condition number above which a fit is rejected as ill-conditioned.
pub const DEFAULT_MAX_CONDITION: f64 = 1e14;
/// Default `ω_J / Fω_I` bound for the infrared detailed-balance band.
pub const DEFAULT_INFRARED_RATIO: f64 = 0.5;

const MIN_FIT_POINTS: usize = 20;
const MIN_SLOPE_POINTS: usize = 5;
const MIN_TAIL_POINTS: usize = 8;

/// In and out frequency ladders `ω = πK/L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub l_in: f64,
    pub l_out: f64,
}

impl FrequencyGrid {
    pub fn new(l_in: f64, l_out: f64) -> Result<Self> {
        for (name, l) in [("l_in", l_in), ("l_out", l_out)] {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(name, format!("{l} is not a positive length")));
            }
        }
        Ok(FrequencyGrid { l_in, l_out })
    }

    pub fn from_specs(in_spec: &BasisSpec, out_spec: &BasisSpec) -> Self {
        FrequencyGrid {
            l_in: in_spec.length,
            l_out: out_spec.length,
        }
    }

    pub fn omega_in(&self, i: usize) -> f64 {
        PI * i as f64 / self.l_in
    }

    pub fn omega_out(&self, j: usize) -> f64 {
        PI * j as f64 / self.l_out
    }

    pub fn gap_in(&self) -> f64 {
        PI / self.l_in
    }

    pub fn gap_out(&self) -> f64 {
        PI / self.l_out
    }

    fn prefactor(&self, norm: f64, kappa: f64, i: usize) -> f64 {
        norm * self.gap_in() * self.gap_out() / (PI * kappa * self.omega_in(i))
    }
}

/// Rectangular block of 1-based mode indices, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub i: (usize, usize),
    pub j: (usize, usize),
}

impl Band {
    pub fn new(i: (usize, usize), j: (usize, usize)) -> Result<Self> {
        if i.0 == 0 || j.0 == 0 || i.0 > i.1 || j.0 > j.1 {
            return Err(Error::invalid("band", format!("I {i:?}, J {j:?} is not a valid 1-based block")));
        }
        Ok(Band { i, j })
    }

    /// Rescales a band quoted for cutoff 256 to cutoff `n`.
    pub fn scaled(i: (usize, usize), j: (usize, usize), n: usize) -> Result<Self> {
        let f = |k: usize| ((k * n) as f64 / 256.0).round().max(1.0) as usize;
        Band::new((f(i.0), f(i.1)), (f(j.0), f(j.1)))
    }

    pub fn check(&self, size: usize) -> Result<()> {
        if self.i.1 > size || self.j.1 > size {
            return Err(Error::IndexOutOfRange {
                index: self.i.1.max(self.j.1),
                cutoff: size,
            });
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.i.0..=self.i.1).flat_map(move |i| (self.j.0..=self.j.1).map(move |j| (i, j)))
    }
}

/// `A + B sin²((1 + C) ε ω)`.
pub fn gamma_factor(a: f64, b: f64, c: f64, epsilon: f64, omega: f64) -> f64 {
    a + b * ((1.0 + c) * epsilon * omega).sin().powi(2)
}

fn planck(omega: f64, kappa: f64) -> f64 {
    1.0 / (2.0 * PI * omega / kappa).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFitParams {
    pub norm: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub kappa: f64,
    pub epsilon: f64,
}

impl BetaFitParams {
    pub fn gamma(&self, omega: f64) -> f64 {
        gamma_factor(self.a, self.b, self.c, self.epsilon, omega)
    }

    /// Oscillation period parameter `(1 + C) ε`.
    pub fn period(&self) -> f64 {
        (1.0 + self.c) * self.epsilon
    }
}

pub fn beta_model(p: &BetaFitParams, grid: &FrequencyGrid, i: usize, j: usize) -> f64 {
    let w = grid.omega_out(j);
    grid.prefactor(p.norm, p.kappa, i) * p.gamma(w) * planck(w, p.kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaFitParams {
    pub norm: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d1: f64,
    pub d2: f64,
    pub f: f64,
    pub kappa_tilde: f64,
    pub kappa: f64,
    pub epsilon: f64,
}

impl AlphaFitParams {
    pub fn gamma(&self, omega: f64) -> f64 {
        gamma_factor(self.a, self.b, self.c, self.epsilon, omega)
    }

    /// Resonance frequency `F ω_I`.
    pub fn resonance(&self, grid: &FrequencyGrid, i: usize) -> f64 {
        self.f * grid.omega_in(i)
    }
}

/// Whether `(I, J)` lies within `window` (absolute frequency) of the resonance.
pub fn in_pole_window(p: &AlphaFitParams, grid: &FrequencyGrid, i: usize, j: usize, window: f64) -> bool {
    (grid.omega_out(j) - p.resonance(grid, i)).abs() < window.max(0.0) || grid.omega_out(j) == p.resonance(grid, i)
}

/// Two-branch `|α|²` model; `None` inside the pole-exclusion `window`.
pub fn alpha_model(p: &AlphaFitParams, grid: &FrequencyGrid, i: usize, j: usize, window: f64) -> Option<f64> {
    if in_pole_window(p, grid, i, j, window) {
        return None;
    }
    let w = grid.omega_out(j);
    let res = p.resonance(grid, i);
    let pole = (res / (res - w)).powi(2);
    let base = grid.prefactor(p.norm, p.kappa, i) * p.gamma(w);
    Some(if w < res {
        let x = 2.0 * PI * w / p.kappa;
        base * (1.0 + p.d1 * pole) / (1.0 + p.d1) / (-(-x).exp_m1())
    } else {
        base * (1.0 + p.d2 * pole) / (2.0 * PI * (w - res) / p.kappa_tilde).exp_m1()
    })
}

/// Levenberg–Marquardt with box constraints and forward-difference Jacobians.
mod lm {
    use super::*;

    pub struct Outcome {
        pub x: Vec<f64>,
        pub cost: f64,
        pub jac: DMatrix<f64>,
        pub residuals: Vec<f64>,
    }

    fn eval<F: Fn(&[f64]) -> Option<Vec<f64>>>(f: &F, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let r = f(x)?;
        if r.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let c = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
        Some((r, c))
    }

    fn jacobian<F: Fn(&[f64]) -> Option<Vec<f64>>>(
        f: &F,
        x: &[f64],
        r: &[f64],
        lo: &[f64],
        hi: &[f64],
    ) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(r.len(), x.len());
        for k in 0..x.len() {
            let h = 1e-7 * x[k].abs().max(1e-4);
            let mut xp = x.to_vec();
            let (mut step, mut hp) = (h, x[k] + h);
            if hp > hi[k] {
                hp = x[k] - h;
                step = -h;
            }
            xp[k] = hp;
            if let Some(rp) = f(&xp) {
                let mut xm = x.to_vec();
                let xmk = x[k] - step;
                if xmk >= lo[k] && xmk <= hi[k] {
                    xm[k] = xmk;
                    if let Some(rm) = f(&xm) {
                        for row in 0..r.len() {
                            jac[(row, k)] = (rp[row] - rm[row]) / (2.0 * step);
                        }
                        continue;
                    }
                }
                for row in 0..r.len() {
                    jac[(row, k)] = (rp[row] - r[row]) / step;
                }
            }
        }
        jac
    }

    pub fn minimize<F: Fn(&[f64]) -> Option<Vec<f64>>>(
        f: F,
        x0: &[f64],
        lo: &[f64],
        hi: &[f64],
        max_iter: usize,
    ) -> Option<Outcome> {
        let clamp = |x: &mut [f64]| {
            for k in 0..x.len() {
                x[k] = x[k].clamp(lo[k], hi[k]);
            }
        };
        let mut x = x0.to_vec();
        clamp(&mut x);
        let (mut r, mut cost) = eval(&f, &x)?;
        let mut lambda = 1e-3;
        for _ in 0..max_iter {
            let jac = jacobian(&f, &x, &r, lo, hi);
            let rv = DVector::from_column_slice(&r);
            let g = jac.transpose() * &rv;
            let a = jac.transpose() * &jac;
            if g.amax() <= 1e-15 * (1.0 + cost) {
                break;
            }
            let diag_floor = 1e-12 * a.diagonal().amax().max(1e-300);
            let mut improved = false;
            let mut tiny_step = false;
            while lambda < 1e16 {
                let mut m = a.clone();
                for k in 0..x.len() {
                    m[(k, k)] += lambda * a[(k, k)].max(diag_floor);
                }
                let Some(delta) = m.lu().solve(&(-&g)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
                clamp(&mut xn);
                let moved = xn
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                    .fold(0.0, f64::max);
                if moved < 1e-14 {
                    tiny_step = true;
                    break;
                }
                match eval(&f, &xn) {
                    Some((rn, cn)) if cn < cost => {
                        let gain = (cost - cn) / cost.max(1e-300);
                        x = xn;
                        r = rn;
                        cost = cn;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        tiny_step = gain < 1e-16 && moved < 1e-10;
                        break;
                    }
                    _ => lambda *= 4.0,
                }
            }
            if !improved || tiny_step {
                break;
            }
        }
        let jac = jacobian(&f, &x, &r, lo, hi);
        Some(Outcome {
            x,
            cost,
            jac,
            residuals: r,
        })
    }

    /// Condition number of `JᵀJ`, the inverse parameter covariance up to scale.
    pub fn condition(jac: &DMatrix<f64>) -> f64 {
        let sv = jac.clone().svd(false, false).singular_values;
        let (max, min) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if min == 0.0 {
            f64::INFINITY
        } else {
            (max / min).powi(2)
        }
    }
}

/// Least-squares weights `1/y²` make the linear initial guess mimic a relative fit.
fn linear_amplitudes(k: &[f64], s: &[f64], y: &[f64]) -> (f64, f64) {
    // y ≈ k (A + B s)  →  y/k ≈ A + B s
    let (mut saa, mut sab, mut sbb, mut sa, mut sb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&kk, &ss), &yy) in k.iter().zip(s).zip(y) {
        let z = yy / kk;
        let w = 1.0 / (z * z).max(1e-300);
        saa += w;
        sab += w * ss;
        sbb += w * ss * ss;
        sa += w * z;
        sb += w * z * ss;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() <= 1e-14 * saa * sbb {
        return ((sa / saa).max(1e-6), 0.0);
    }
    let a = (sa * sbb - sb * sab) / det;
    let b = (saa * sb - sab * sa) / det;
    (a.max(1e-6), b.max(1e-6))
}

fn band_points(data: &Array2<f64>, band: &Band) -> Result<Vec<(usize, usize, f64)>> {
    band.check(data.nrows().min(data.ncols()))?;
    let pts: Vec<_> = band.iter().map(|(i, j)| (i, j, data[[i - 1, j - 1]])).collect();
    if let Some(&(i, j, v)) = pts.iter().find(|p| !(p.2 > 0.0) || !p.2.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "entry ({i}, {j}) = {v} is not positive; log-space fits need positive data"
        )));
    }
    Ok(pts)
}

/// Which gray-body parameters are held fixed; `None` means fitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GrayBodyFixed {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFitConfig {
    pub kappa: f64,
    pub epsilon: f64,
    pub norm: f64,
    pub fixed: GrayBodyFixed,
    /// Starting values of `C`; the best converged start wins.
    pub c_starts: Vec<f64>,
    pub max_condition: f64,
}

impl BetaFitConfig {
    pub fn new(kappa: f64, epsilon: f64, norm: f64) -> Self {
        BetaFitConfig {
            kappa,
            epsilon,
            norm,
            fixed: GrayBodyFixed::default(),
            c_starts: default_c_starts(),
            max_condition: DEFAULT_MAX_CONDITION,
        }
    }
}

/// `C` from -0.5 to 0.5 in steps of 0.05.
pub fn default_c_starts() -> Vec<f64> {
    (-10..=10).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub params: BetaFitParams,
    /// Root-mean-square of `log(model) - log(data)`.
    pub residual: f64,
    pub condition: f64,
    pub points: usize,
    pub band: Band,
}

pub fn fit_beta(data: &Array2<f64>, grid: &FrequencyGrid, band: &Band, cfg: &BetaFitConfig) -> Result<BetaFit> {
    let pts = band_points(data, band)?;
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in band, at least {MIN_FIT_POINTS} needed",
            pts.len()
        )));
    }
    let base = BetaFitParams {
        norm: cfg.norm,
        a: 1.0,
        b: 0.0,
        c: 0.0,
        kappa: cfg.kappa,
        epsilon: cfg.epsilon,
    };
    let logs: Vec<f64> = pts.iter().map(|p| p.2.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let k: Vec<f64> = pts
        .iter()
        .map(|&(i, j, _)| grid.prefactor(cfg.norm, cfg.kappa, i) * planck(grid.omega_out(j), cfg.kappa))
        .collect();
    let fx = cfg.fixed;
    let build = |x: &[f64]| -> BetaFitParams {
        let mut it = x.iter().copied();
        let mut p = base;
        p.a = fx.a.unwrap_or_else(|| it.next().unwrap());
        p.b = fx.b.unwrap_or_else(|| it.next().unwrap());
        p.c = fx.c.unwrap_or_else(|| it.next().unwrap());
        p
    };
    let residuals = |x: &[f64]| -> Option<Vec<f64>> {
        let p = build(x);
        pts.iter()
            .zip(&logs)
            .map(|(&(i, j, _), &l)| {
                let m = beta_model(&p, grid, i, j);
                (m > 0.0).then(|| m.ln() - l)
            })
            .collect()
    };
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    if fx.a.is_none() {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    if fx.b.is_none() {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    if fx.c.is_none() {
        lo.push(-0.95);
        hi.push(10.0);
    }
    let c_starts: Vec<f64> = match fx.c {
        Some(c) => vec![c],
        None => cfg.c_starts.clone(),
    };
    let mut best: Option<lm::Outcome> = None;
    for &c0 in &c_starts {
        let s: Vec<f64> = pts
            .iter()
            .map(|&(_, j, _)| ((1.0 + c0) * cfg.epsilon * grid.omega_out(j)).sin().powi(2))
            .collect();
        let (a0, b0) = linear_amplitudes(&k, &s, &ys);
        let mut x0 = Vec::new();
        if fx.a.is_none() {
            x0.push(a0);
        }
        if fx.b.is_none() {
            x0.push(b0);
        }
        if fx.c.is_none() {
            x0.push(c0);
        }
        if x0.is_empty() {
            let r = residuals(&[]).ok_or_else(|| Error::InsufficientData("model is not positive".into()))?;
            let cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
            best = Some(lm::Outcome {
                x: vec![],
                cost,
                jac: DMatrix::zeros(r.len(), 0),
                residuals: r,
            });
            break;
        }
        if let Some(out) = lm::minimize(&residuals, &x0, &lo, &hi, 300) {
            if best.as_ref().map_or(true, |b| out.cost < b.cost) {
                best = Some(out);
            }
        }
    }
    let out = best.ok_or_else(|| Error::InsufficientData("no start produced a positive model".into()))?;
    finish_fit(&out, cfg.max_condition).map(|(residual, condition)| BetaFit {
        params: build(&out.x),
        residual,
        condition,
        points: pts.len(),
        band: *band,
    })
}

fn finish_fit(out: &lm::Outcome, max_condition: f64) -> Result<(f64, f64)> {
    let n = out.residuals.len().max(1) as f64;
    let residual = (out.residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let condition = if out.jac.ncols() == 0 { 1.0 } else { lm::condition(&out.jac) };
    if !(condition <= max_condition) {
        return Err(Error::IllConditioned { condition });
    }
    Ok((residual, condition))
}

/// Which `|α|²` parameters are held fixed; `None` means fitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaFixed {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub f: Option<f64>,
    pub kappa_tilde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFitConfig {
    pub kappa: f64,
    pub epsilon: f64,
    pub norm: f64,
    pub fixed: AlphaFixed,
    pub c_starts: Vec<f64>,
    pub f_starts: Vec<f64>,
    /// Pole-exclusion half-width in units of the out gap.
    pub pole_window: f64,
    pub max_condition: f64,
}

impl AlphaFitConfig {
    pub fn new(kappa: f64, epsilon: f64, norm: f64) -> Self {
        AlphaFitConfig {
            kappa,
            epsilon,
            norm,
            fixed: AlphaFixed::default(),
            c_starts: default_c_starts(),
            f_starts: vec![0.25, 0.5, 1.0],
            pole_window: DEFAULT_POLE_WINDOW,
            max_condition: DEFAULT_MAX_CONDITION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub params: AlphaFitParams,
    pub residual: f64,
    pub condition: f64,
    /// Points used after pole exclusion.
    pub points: usize,
    pub excluded: usize,
    pub band: Band,
}

const ALPHA_NAMES: usize = 7;

fn alpha_fixed_slots(fx: &AlphaFixed) -> [Option<f64>; ALPHA_NAMES] {
    [fx.a, fx.b, fx.c, fx.d1, fx.d2, fx.f, fx.kappa_tilde]
}

fn alpha_from_slots(v: &[f64; ALPHA_NAMES], cfg: &AlphaFitConfig) -> AlphaFitParams {
    AlphaFitParams {
        norm: cfg.norm,
        a: v[0],
        b: v[1],
        c: v[2],
        d1: v[3],
        d2: v[4],
        f: v[5],
        kappa_tilde: v[6],
        kappa: cfg.kappa,
        epsilon: cfg.epsilon,
    }
}

pub fn fit_alpha(data: &Array2<f64>, grid: &FrequencyGrid, band: &Band, cfg: &AlphaFitConfig) -> Result<AlphaFit> {
    let all = band_points(data, band)?;
    let window = cfg.pole_window * grid.gap_out();
    let fixed = alpha_fixed_slots(&cfg.fixed);
    let bounds_lo = [0.0, 0.0, -0.95, 0.0, 0.0, 1e-3, 1e-3 * cfg.kappa];
    let bounds_hi = [f64::INFINITY, f64::INFINITY, 10.0, 1e3, 1e3, 1e3, 1e3 * cfg.kappa];
    let free: Vec<usize> = (0..ALPHA_NAMES).filter(|&k| fixed[k].is_none()).collect();
    let lo: Vec<f64> = free.iter().map(|&k| bounds_lo[k]).collect();
    let hi: Vec<f64> = free.iter().map(|&k| bounds_hi[k]).collect();
    let slots = |x: &[f64]| -> [f64; ALPHA_NAMES] {
        let mut v = [0.0; ALPHA_NAMES];
        let mut it = x.iter().copied();
        for k in 0..ALPHA_NAMES {
            v[k] = fixed[k].unwrap_or_else(|| it.next().unwrap());
        }
        v
    };

    let select = |p: &AlphaFitParams| -> Vec<(usize, usize, f64)> {
        all.iter().copied().filter(|&(i, j, _)| !in_pole_window(p, grid, i, j, window)).collect()
    };

    // Fits with the point set frozen; the set is refreshed after convergence.
    const ROUNDS: usize = 5;
    let solve = |x0: Vec<f64>| -> Option<(lm::Outcome, usize)> {
        let mut x = x0;
        for round in 0..ROUNDS {
            let pts = select(&alpha_from_slots(&slots(&x), cfg));
            if pts.len() < MIN_FIT_POINTS {
                return None;
            }
            let residuals = |x: &[f64]| -> Option<Vec<f64>> {
                let p = alpha_from_slots(&slots(x), cfg);
                pts.iter()
                    .map(|&(i, j, y)| {
                        let m = alpha_model(&p, grid, i, j, 0.0)?;
                        (m > 0.0 && m.is_finite()).then(|| m.ln() - y.ln())
                    })
                    .collect()
            };
            let out = lm::minimize(residuals, &x, &lo, &hi, 300)?;
            let settled = select(&alpha_from_slots(&slots(&out.x), cfg)).len() == pts.len();
            if settled || round + 1 == ROUNDS {
                return Some((out, pts.len()));
            }
            x = out.x;
        }
        None
    };

    let c_starts = fixed[2].map_or(cfg.c_starts.clone(), |c| vec![c]);
    let f_starts = fixed[5].map_or(cfg.f_starts.clone(), |f| vec![f]);
    let mut best: Option<(lm::Outcome, usize)> = None;
    for &c0 in &c_starts {
        for &f0 in &f_starts {
            let mut guess = [1.0, 0.0, c0, 0.1, 0.1, f0, 1.5 * cfg.kappa];
            for k in 0..ALPHA_NAMES {
                if let Some(v) = fixed[k] {
                    guess[k] = v;
                }
            }
            // Gray-body amplitudes are linear once the other parameters are set.
            let trial = alpha_from_slots(&guess, cfg);
            let pts = select(&trial);
            if pts.len() >= MIN_FIT_POINTS {
                let unit = AlphaFitParams { a: 1.0, b: 0.0, ..trial };
                let k: Vec<f64> = pts.iter().map(|&(i, j, _)| alpha_model(&unit, grid, i, j, 0.0).unwrap_or(1.0)).collect();
                let s: Vec<f64> = pts
                    .iter()
                    .map(|&(_, j, _)| ((1.0 + c0) * cfg.epsilon * grid.omega_out(j)).sin().powi(2))
                    .collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
                let (a0, b0) = linear_amplitudes(&k, &s, &ys);
                if fixed[0].is_none() {
                    guess[0] = a0;
                }
                if fixed[1].is_none() {
                    guess[1] = b0;
                }
            }
            let x0: Vec<f64> = free.iter().map(|&k| guess[k]).collect();
            if let Some(out) = solve(x0) {
                if best.as_ref().map_or(true, |b| out.0.cost / (out.1 as f64) < b.0.cost / (b.1 as f64)) {
                    best = Some(out);
                }
            }
        }
    }
    let (out, used) = best.ok_or_else(|| {
        Error::InsufficientData(format!("fewer than {MIN_FIT_POINTS} usable points outside the pole window"))
    })?;
    let (residual, condition) = finish_fit(&out, cfg.max_condition)?;
    Ok(AlphaFit {
        params: alpha_from_slots(&slots(&out.x), cfg),
        residual,
        condition,
        points: used,
        excluded: all.len() - used,
        band: *band,
    })
}

/// Separate `|α|²` fits for each row `I` of the band.
pub fn fit_alpha_rows(
    data: &Array2<f64>,
    grid: &FrequencyGrid,
    band: &Band,
    cfg: &AlphaFitConfig,
) -> Vec<(usize, Result<AlphaFit>)> {
    (band.i.0..=band.i.1)
        .map(|i| {
            let row = Band { i: (i, i), j: band.j };
            (i, fit_alpha(data, grid, &row, cfg))
        })
        .collect()
}

/// Thermality function with masked entries stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Thermality {
    pub values: Array2<f64>,
    pub masked: usize,
}

impl Thermality {
    /// Extremes over unmasked entries of a band.
    pub fn range(&self, band: &Band) -> Option<(f64, f64)> {
        band.iter()
            .filter_map(|(i, j)| self.values.get([i - 1, j - 1]).copied())
            .filter(|v| v.is_finite())
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// `T_IJ = |α|/(|β| e^(πω_J/κ)) · √(1 + D₁) / √(1 + D₁ (Fω_I)²/|Fω_I - ω_J|²)`.
pub fn thermality(m: &Magnitudes, d1: f64, f: f64, kappa: f64, floor: f64) -> Thermality {
    let grid = FrequencyGrid::from_specs(&m.in_spec, &m.out_spec);
    let mut masked = 0;
    let values = Array2::from_shape_fn(m.beta2.dim(), |(i0, j0)| {
        let beta = m.beta2[[i0, j0]].max(0.0).sqrt();
        if !(beta >= floor) || beta == 0.0 {
            masked += 1;
            return f64::NAN;
        }
        let alpha = m.alpha2[[i0, j0]].max(0.0).sqrt();
        let wj = grid.omega_out(j0 + 1);
        let res = f * grid.omega_in(i0 + 1);
        let pole = if d1 == 0.0 { 0.0 } else { d1 * (res / (res - wj)).powi(2) };
        alpha / (beta * (PI * wj / kappa).exp()) * ((1.0 + d1) / (1.0 + pole)).sqrt()
    });
    Thermality { values, masked }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetailedBalance {
    pub slope: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub points: usize,
}

impl DetailedBalance {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.relative_error.abs() <= tolerance
    }
}

/// Regression slope of `log(|α|²/|β|²)` against `ω_J` over `band`.
pub fn detailed_balance_slope(m: &Magnitudes, kappa: f64, band: &Band, floor: f64) -> Result<DetailedBalance> {
    detailed_balance_slope_where(m, kappa, band, floor, |_, _| true)
}

/// Out frequencies at most `ratio` times the resonance `Fω_I`.
pub fn well_below_resonance(grid: FrequencyGrid, f: f64, ratio: f64) -> impl Fn(usize, usize) -> bool {
    move |i, j| grid.omega_out(j) <= ratio * f * grid.omega_in(i)
}

/// As [`detailed_balance_slope`], keeping only band entries `(I, J)` accepted by `keep`.
pub fn detailed_balance_slope_where<P: Fn(usize, usize) -> bool>(
    m: &Magnitudes,
    kappa: f64,
    band: &Band,
    floor: f64,
    keep: P,
) -> Result<DetailedBalance> {
    band.check(m.size())?;
    let grid = FrequencyGrid::from_specs(&m.in_spec, &m.out_spec);
    let (xs, ys): (Vec<f64>, Vec<f64>) = band
        .iter()
        .filter(|&(i, j)| keep(i, j))
        .filter_map(|(i, j)| {
            let b2 = m.beta2[[i - 1, j - 1]];
            let a2 = m.alpha2[[i - 1, j - 1]];
            (b2 >= floor * floor && b2 > 0.0 && a2 > 0.0).then(|| (grid.omega_out(j), (a2 / b2).ln()))
        })
        .unzip();
    if xs.len() < MIN_SLOPE_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} usable points for the detailed-balance slope, at least {MIN_SLOPE_POINTS} needed",
            xs.len()
        )));
    }
    let (slope, _, _) = linear_regression(&xs, &ys)
        .ok_or_else(|| Error::InsufficientData("band has a single out frequency".into()))?;
    let expected = 2.0 * PI / kappa;
    Ok(DetailedBalance {
        slope,
        expected,
        relative_error: slope / expected - 1.0,
        points: xs.len(),
    })
}

/// Least-squares line `y = slope·x + intercept`, with the RMS residual.
fn linear_regression(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some((slope, intercept, rms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    /// `n` in `|β| ∝ ω_J^(-n)`.
    pub exponent: f64,
    /// RMS residual of the log–log regression.
    pub residual: f64,
    pub points: usize,
}

/// Power-law exponent of `|β|` against `ω_J`.
///
/// `beta2_row[j - 1]` holds `|β_IJ|²`; only `J` in `j_band` (inclusive) with positive values are used.
pub fn tail_exponent(beta2_row: &[f64], grid: &FrequencyGrid, j_band: (usize, usize)) -> Result<TailFit> {
    tail_exponent_where(beta2_row, grid, j_band, |_| true)
}

/// As [`tail_exponent`], keeping only `J` accepted by `keep`.
pub fn tail_exponent_where<P: Fn(usize) -> bool>(
    beta2_row: &[f64],
    grid: &FrequencyGrid,
    j_band: (usize, usize),
    keep: P,
) -> Result<TailFit> {
    if j_band.0 == 0 || j_band.1 > beta2_row.len() || j_band.0 > j_band.1 {
        return Err(Error::IndexOutOfRange {
            index: j_band.1,
            cutoff: beta2_row.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = (j_band.0..=j_band.1)
        .filter(|&j| keep(j) && beta2_row[j - 1] > 0.0)
        .map(|j| (grid.omega_out(j).ln(), 0.5 * beta2_row[j - 1].ln()))
        .unzip();
    if xs.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} tail points, at least {MIN_TAIL_POINTS} needed",
            xs.len()
        )));
    }
    let (slope, _, residual) = linear_regression(&xs, &ys).expect("distinct frequencies");
    Ok(TailFit {
        exponent: -slope,
        residual,
        points: xs.len(),
    })
}
