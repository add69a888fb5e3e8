//! Richardson extrapolation of coefficient magnitudes in the mode cutoff.
//!
//! With `a_N = a∞ + c·N^(-p)` sampled at `N, 2N, 4N` the order is
//! `p = log₂(d₁/d₂)` and the limit `a∞ = a₃ - d₂²/(d₁ - d₂)`, where
//! `d₁ = a₁ - a₂` and `d₂ = a₂ - a₃`.

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::bogoliubov::{BasisSpec, BogoliubovPair};
use crate::error::{Error, Result};

/// Smallest order accepted as convergence.
pub const MIN_ORDER: f64 = 0.25;

/// Changes below this, relative to `max(1, |a|)`, count as round-off: the
/// series is taken as converged at its finest value.
pub const STATIONARY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub limit: f64,
    /// Estimated order; infinite when the last two values coincide, NaN when undefined.
    pub order: f64,
    pub converged: bool,
}

/// Three-point estimate from values at cutoffs `N`, `2N`, `4N`.
///
/// A series that moves by less than [`STATIONARY_TOL`] is converged at its
/// finest value. Otherwise falls back to the finest value with
/// `converged = false` when the differences change sign, fail to shrink, or
/// imply an order below [`MIN_ORDER`].
pub fn richardson3(a1: f64, a2: f64, a3: f64) -> Estimate {
    let d1 = a1 - a2;
    let d2 = a2 - a3;
    let fallback = |order| Estimate {
        limit: a3,
        order,
        converged: false,
    };
    if !(a1.is_finite() && a2.is_finite() && a3.is_finite()) {
        return fallback(f64::NAN);
    }
    let scale = a1.abs().max(a2.abs()).max(a3.abs()).max(1.0);
    if d2 == 0.0 || d1.abs().max(d2.abs()) <= STATIONARY_TOL * scale {
        return Estimate {
            limit: a3,
            order: f64::INFINITY,
            converged: true,
        };
    }
    if d1 == 0.0 || d1.signum() != d2.signum() {
        return fallback(f64::NAN);
    }
    let order = (d1 / d2).log2();
    if d2.abs() >= d1.abs() || order <= MIN_ORDER {
        return fallback(order);
    }
    Estimate {
        limit: a3 - d2 * d2 / (d1 - d2),
        order,
        converged: true,
    }
}

/// Per-entry values at a ladder of cutoffs.
#[derive(Debug, Clone)]
pub struct CutoffSeries {
    cutoffs: Vec<usize>,
    values: Vec<Array2<f64>>,
}

impl CutoffSeries {
    /// Needs at least three ascending cutoffs, each twice the previous.
    pub fn new(cutoffs: Vec<usize>, values: Vec<Array2<f64>>) -> Result<Self> {
        if cutoffs.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "{} cutoffs given, at least 3 are needed",
                cutoffs.len()
            )));
        }
        if cutoffs.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} cutoffs but {} value matrices",
                cutoffs.len(),
                values.len()
            )));
        }
        if cutoffs.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::invalid("cutoffs", format!("{cutoffs:?} is not a ratio-2 ladder")));
        }
        Ok(CutoffSeries { cutoffs, values })
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    /// Index range shared by every matrix.
    pub fn common_shape(&self) -> (usize, usize) {
        self.values.iter().fold((usize::MAX, usize::MAX), |(r, c), v| {
            (r.min(v.nrows()), c.min(v.ncols()))
        })
    }

    /// Extrapolates each entry from the three finest cutoffs.
    pub fn richardson(&self) -> ExtrapolatedMatrix {
        let (rows, cols) = self.common_shape();
        let k = self.values.len();
        let view = |m: &Array2<f64>| m.slice(s![..rows, ..cols]).to_owned();
        let (a1, a2, a3) = (view(&self.values[k - 3]), view(&self.values[k - 2]), view(&self.values[k - 1]));
        let mut limit = Array2::zeros((rows, cols));
        let mut order = Array2::zeros((rows, cols));
        let mut converged = Array2::from_elem((rows, cols), false);
        Zip::from(&mut limit)
            .and(&mut order)
            .and(&mut converged)
            .and(&a1)
            .and(&a2)
            .and(&a3)
            .for_each(|l, o, c, &x1, &x2, &x3| {
                let e = richardson3(x1, x2, x3);
                *l = e.limit;
                *o = e.order;
                *c = e.converged;
            });
        ExtrapolatedMatrix { limit, order, converged }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolatedMatrix {
    pub limit: Array2<f64>,
    pub order: Array2<f64>,
    pub converged: Array2<bool>,
}

impl ExtrapolatedMatrix {
    /// Fraction of converged entries in the block `rows × cols` (1-based inclusive ranges).
    /// Flags negative limits as non-converged and falls back to `finest` there.
    /// Squared magnitudes cannot be negative, so such a limit is an artifact.
    pub fn clamp_nonnegative(&mut self, finest: &Array2<f64>) {
        let (rows, cols) = self.limit.dim();
        Zip::from(&mut self.limit)
            .and(&mut self.converged)
            .and(finest.slice(s![..rows, ..cols]))
            .for_each(|l, c, &f| {
                if *l < 0.0 {
                    *l = f;
                    *c = false;
                }
            });
    }

    pub fn converged_fraction(&self, rows: (usize, usize), cols: (usize, usize)) -> f64 {
        let block = self.converged.slice(s![rows.0 - 1..rows.1, cols.0 - 1..cols.1]);
        let total = block.len();
        if total == 0 {
            return 0.0;
        }
        block.iter().filter(|&&c| c).count() as f64 / total as f64
    }
}

/// Squared coefficient magnitudes, either from one cutoff or extrapolated.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitudes {
    pub alpha2: Array2<f64>,
    pub beta2: Array2<f64>,
    pub in_spec: BasisSpec,
    pub out_spec: BasisSpec,
}

impl Magnitudes {
    pub fn size(&self) -> usize {
        self.alpha2.nrows()
    }
}

impl From<&BogoliubovPair> for Magnitudes {
    fn from(p: &BogoliubovPair) -> Self {
        Magnitudes {
            alpha2: p.alpha.mapv(|z| z.norm_sqr()),
            beta2: p.beta.mapv(|z| z.norm_sqr()),
            in_spec: p.in_spec,
            out_spec: p.out_spec,
        }
    }
}

/// Extrapolated `|α|²` and `|β|²` over the index range of the coarsest cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolatedPair {
    pub alpha2: ExtrapolatedMatrix,
    pub beta2: ExtrapolatedMatrix,
    pub in_spec: BasisSpec,
    pub out_spec: BasisSpec,
    pub cutoffs: Vec<usize>,
}

impl ExtrapolatedPair {
    /// Both magnitudes at `(i, j)` (1-based) converged.
    pub fn converged(&self, i: usize, j: usize) -> bool {
        let at = |m: &ExtrapolatedMatrix| m.converged.get([i - 1, j - 1]).copied().unwrap_or(false);
        at(&self.alpha2) && at(&self.beta2)
    }

    pub fn magnitudes(&self) -> Magnitudes {
        Magnitudes {
            alpha2: self.alpha2.limit.clone(),
            beta2: self.beta2.limit.clone(),
            in_spec: self.in_spec,
            out_spec: self.out_spec,
        }
    }
}

/// Extrapolates a ladder of pairs that differ only in cutoff.
pub fn extrapolate_pairs(pairs: &[BogoliubovPair]) -> Result<ExtrapolatedPair> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no pairs given".into()))?;
    for p in pairs {
        let same = |a: &BasisSpec, b: &BasisSpec| (a.length - b.length).abs() <= 1e-12 * a.length.max(1.0);
        if !same(&p.in_spec, &first.in_spec) || !same(&p.out_spec, &first.out_spec) {
            return Err(Error::BasisMismatch(
                "pairs in an extrapolation ladder must share in and out cavity lengths".into(),
            ));
        }
    }
    let mut sorted: Vec<&BogoliubovPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| p.cutoff());
    let cutoffs: Vec<usize> = sorted.iter().map(|p| p.cutoff()).collect();
    let alpha = CutoffSeries::new(
        cutoffs.clone(),
        sorted.iter().map(|p| p.alpha.mapv(|z| z.norm_sqr())).collect(),
    )?;
    let beta = CutoffSeries::new(
        cutoffs.clone(),
        sorted.iter().map(|p| p.beta.mapv(|z| z.norm_sqr())).collect(),
    )?;
    let n = alpha.common_shape().0;
    let finest = sorted[sorted.len() - 1];
    let mut alpha2 = alpha.richardson();
    alpha2.clamp_nonnegative(&finest.alpha.mapv(|z| z.norm_sqr()));
    let mut beta2 = beta.richardson();
    beta2.clamp_nonnegative(&finest.beta.mapv(|z| z.norm_sqr()));
    Ok(ExtrapolatedPair {
        alpha2,
        beta2,
        in_spec: BasisSpec { cutoff: n, ..sorted[0].in_spec },
        out_spec: BasisSpec { cutoff: n, ..sorted[0].out_spec },
        cutoffs,
    })
}
