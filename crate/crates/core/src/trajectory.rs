//! Closed-form boundary trajectories of the cavity.
//!
//! Every family shares one smooth displacement profile
//!
//! ```text
//! m(t) = s/(2κ) + [log cosh(κ(t - t0)) - log cosh(s - κ(t - t0))] / (2κ),   s = εκ
//! ```
//!
//! which rises monotonically from 0 to ε, with speed
//! `v(t) = [tanh(κ(t - t0)) + tanh(s - κ(t - t0))] / 2` peaking at `tanh(s/2)` halfway
//! through the motion. The families differ only in how the two mirrors follow it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Velocity threshold below which a boundary counts as static.
pub const DEFAULT_V_TOL: f64 = 1e-8;

/// Largest junction gap accepted when concatenating trajectories.
pub const JUNCTION_TOL: f64 = 1e-9;

/// Which mirrors move, and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Left mirror fixed at 0, right mirror moves out by ε.
    OneMirror,
    /// Both mirrors move outwards by ε, symmetric about the cavity center.
    SymmetricPair,
    /// Both mirrors translate by ε; the length never changes.
    RigidCavity,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::OneMirror => "one-mirror",
            Family::SymmetricPair => "symmetric",
            Family::RigidCavity => "rigid",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "one-mirror" | "one_mirror" | "onemirror" => Ok(Family::OneMirror),
            "symmetric" | "symmetric-pair" | "symmetric_pair" => Ok(Family::SymmetricPair),
            "rigid" | "rigid-cavity" | "rigid_cavity" => Ok(Family::RigidCavity),
            other => Err(Error::invalid(
                "family",
                format!("unknown family `{other}` (expected one-mirror, symmetric or rigid)"),
            )),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Positions and velocities of both boundaries at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryState {
    pub f: f64,
    pub g: f64,
    pub fdot: f64,
    pub gdot: f64,
    pub length: f64,
    pub ldot: f64,
}

impl BoundaryState {
    pub fn fixed(f: f64, g: f64) -> Self {
        BoundaryState {
            f,
            g,
            fdot: 0.0,
            gdot: 0.0,
            length: g - f,
            ldot: 0.0,
        }
    }

    fn from_boundaries(f: f64, g: f64, fdot: f64, gdot: f64) -> Self {
        BoundaryState {
            f,
            g,
            fdot,
            gdot,
            length: g - f,
            ldot: gdot - fdot,
        }
    }
}

/// `log(cosh x)` without overflow for large `|x|`.
pub fn log_cosh_stable(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// One of the three closed-form motions, optionally time reversed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub family: Family,
    /// Change of cavity size (ε ≥ 0; ε = 0 is a static cavity).
    pub epsilon: f64,
    /// Acceleration parameter κ > 0.
    pub kappa: f64,
    /// Onset of the acceleration.
    pub t0: f64,
    /// Cavity length before the forward motion.
    pub l0: f64,
    #[serde(default)]
    pub reversed: bool,
}

impl TrajectoryParams {
    pub fn new(family: Family, epsilon: f64, kappa: f64, t0: f64, l0: f64) -> Result<Self> {
        let traj = TrajectoryParams {
            family,
            epsilon,
            kappa,
            t0,
            l0,
            reversed: false,
        };
        traj.validate()?;
        Ok(traj)
    }

    /// Forward trajectory starting at t0 = 0 with unit initial length.
    pub fn standard(family: Family, epsilon: f64, kappa: f64) -> Result<Self> {
        Self::new(family, epsilon, kappa, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::invalid("epsilon", format!("{} is not a finite value ≥ 0", self.epsilon)));
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 {
            return Err(Error::invalid("kappa", format!("{} is not a finite positive value", self.kappa)));
        }
        if !self.t0.is_finite() {
            return Err(Error::invalid("t0", "must be finite"));
        }
        if !self.l0.is_finite() || self.l0 <= 0.0 {
            return Err(Error::invalid("l0", format!("{} is not a finite positive length", self.l0)));
        }
        if !self.s().is_finite() {
            return Err(Error::invalid("epsilon", "ε·κ overflows"));
        }
        Ok(())
    }

    /// Dimensionless product s = εκ.
    pub fn s(&self) -> f64 {
        self.epsilon * self.kappa
    }

    /// Temporal center of the motion; the speed profile is symmetric about it.
    pub fn center(&self) -> f64 {
        self.t0 + 0.5 * self.epsilon
    }

    /// Peak boundary speed, `tanh(s/2)`.
    pub fn max_speed(&self) -> f64 {
        (0.5 * self.s()).tanh()
    }

    /// Displacement and speed of the shared profile at time `t` (forward motion).
    fn profile(&self, t: f64) -> (f64, f64) {
        let s = self.s();
        let x = self.kappa * (t - self.t0);
        let disp = (s + log_cosh_stable(x) - log_cosh_stable(s - x)) / (2.0 * self.kappa);
        let speed = 0.5 * (x.tanh() + (s - x).tanh());
        (disp, speed)
    }

    fn forward(&self, t: f64) -> BoundaryState {
        let (m, v) = self.profile(t);
        match self.family {
            Family::OneMirror => BoundaryState::from_boundaries(0.0, self.l0 + m, 0.0, v),
            Family::SymmetricPair => BoundaryState::from_boundaries(-m, self.l0 + m, -v, v),
            Family::RigidCavity => BoundaryState::from_boundaries(m, self.l0 + m, v, v),
        }
    }

    /// Boundary positions and analytic velocities at time `t`.
    pub fn eval(&self, t: f64) -> BoundaryState {
        if self.reversed {
            let mut b = self.forward(2.0 * self.center() - t);
            b.fdot = -b.fdot;
            b.gdot = -b.gdot;
            b.ldot = -b.ldot;
            b
        } else {
            self.forward(t)
        }
    }

    /// Same motion played backwards about its temporal center.
    pub fn time_reverse(&self) -> Self {
        TrajectoryParams {
            reversed: !self.reversed,
            ..*self
        }
    }

    fn forward_endpoints(&self) -> ((f64, f64), (f64, f64)) {
        let e = self.epsilon;
        let start = (0.0, self.l0);
        let end = match self.family {
            Family::OneMirror => (0.0, self.l0 + e),
            Family::SymmetricPair => (-e, self.l0 + e),
            Family::RigidCavity => (e, self.l0 + e),
        };
        (start, end)
    }

    /// Asymptotic `(f, g)` in the far past.
    pub fn initial_positions(&self) -> (f64, f64) {
        let (start, end) = self.forward_endpoints();
        if self.reversed {
            end
        } else {
            start
        }
    }

    /// Asymptotic `(f, g)` in the far future.
    pub fn final_positions(&self) -> (f64, f64) {
        let (start, end) = self.forward_endpoints();
        if self.reversed {
            start
        } else {
            end
        }
    }

    pub fn initial_length(&self) -> f64 {
        let (f, g) = self.initial_positions();
        g - f
    }

    pub fn final_length(&self) -> f64 {
        let (f, g) = self.final_positions();
        g - f
    }

    /// Earliest and latest times at which both boundaries move slower than `v_tol`.
    ///
    /// The interval always contains the acceleration interval `[t0, t0 + ε]`.
    pub fn static_window(&self, v_tol: f64) -> Result<(f64, f64)> {
        if !(v_tol > 0.0) {
            return Err(Error::invalid("v_tol", "must be positive"));
        }
        let max_speed = self.max_speed();
        if v_tol >= max_speed {
            return Err(Error::DegenerateWindow { v_tol, max_speed });
        }
        // v(x) = sinh s / (cosh s + cosh(2x - s)); solve v = v_tol for |2x - s|.
        let s = self.s();
        let width = if s < 30.0 {
            (s.sinh() / v_tol - s.cosh()).acosh()
        } else {
            // acosh(y) = ln(2y) to double precision once y > 1e8.
            s + (1.0 / v_tol - 1.0).ln()
        };
        let t_in = (self.t0 + (s - width) / (2.0 * self.kappa)).min(self.t0);
        let t_out = (self.t0 + (s + width) / (2.0 * self.kappa)).max(self.t0 + self.epsilon);
        // The window is symmetric about the center, so reversal maps it onto itself.
        Ok((t_in, t_out))
    }
}

/// A trajectory segment shifted in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub params: TrajectoryParams,
    /// The segment is evaluated at `t - shift`.
    pub shift: f64,
    /// Static window of the shifted segment.
    pub window: (f64, f64),
}

impl Segment {
    pub fn eval(&self, t: f64) -> BoundaryState {
        self.params.eval(t - self.shift)
    }
}

/// Closed-form segments played one after another with static dwells in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeTrajectory {
    pub segments: Vec<Segment>,
    /// Static dwell before segment `k + 1`.
    pub rest_gaps: Vec<f64>,
    pub v_tol: f64,
}

impl CompositeTrajectory {
    pub fn single(params: TrajectoryParams, v_tol: f64) -> Result<Self> {
        params.validate()?;
        let window = params.static_window(v_tol)?;
        Ok(CompositeTrajectory {
            segments: vec![Segment {
                params,
                shift: 0.0,
                window,
            }],
            rest_gaps: Vec::new(),
            v_tol,
        })
    }

    /// Appends `next` so that its static window starts `rest` after the current end.
    pub fn then(mut self, next: TrajectoryParams, rest: f64) -> Result<Self> {
        if !(rest >= 0.0) || !rest.is_finite() {
            return Err(Error::invalid("rest", "dwell must be finite and ≥ 0"));
        }
        next.validate()?;
        let last = self.segments.last().expect("composite has at least one segment");
        let (f_end, g_end) = last.params.final_positions();
        let (f_start, g_start) = next.initial_positions();
        let gap = (f_end - f_start).abs().max((g_end - g_start).abs());
        if gap > JUNCTION_TOL {
            return Err(Error::Continuity {
                gap,
                tolerance: JUNCTION_TOL,
            });
        }
        let (w_in, w_out) = next.static_window(self.v_tol)?;
        let shift = last.window.1 + rest - w_in;
        self.segments.push(Segment {
            params: next,
            shift,
            window: (w_in + shift, w_out + shift),
        });
        self.rest_gaps.push(rest);
        Ok(self)
    }

    /// Time span from the start of the first static window to the end of the last.
    pub fn window(&self) -> (f64, f64) {
        (
            self.segments[0].window.0,
            self.segments[self.segments.len() - 1].window.1,
        )
    }

    /// Start times of segments 1.. (the switch points between segments).
    pub fn junctions(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.window.0).collect()
    }

    pub fn eval(&self, t: f64) -> BoundaryState {
        let k = self
            .segments
            .iter()
            .rposition(|s| s.window.0 <= t)
            .unwrap_or(0);
        self.segments[k].eval(t)
    }

    pub fn initial_length(&self) -> f64 {
        self.segments[0].params.initial_length()
    }

    pub fn final_length(&self) -> f64 {
        self.segments[self.segments.len() - 1].params.final_length()
    }
}

/// Concatenates two trajectories with a static dwell of length `rest` between them.
pub fn concat(a: TrajectoryParams, b: TrajectoryParams, rest: f64) -> Result<CompositeTrajectory> {
    CompositeTrajectory::single(a, DEFAULT_V_TOL)?.then(b, rest)
}

/// Anything that prescribes boundary motion over a finite simulation window.
pub trait BoundaryMotion: Sync {
    fn boundaries(&self, t: f64) -> BoundaryState;

    /// Interval outside which the motion is static to within `v_tol`.
    fn simulation_window(&self, v_tol: f64) -> Result<(f64, f64)>;

    fn initial_length(&self) -> f64;

    fn final_length(&self) -> f64;

    /// Times inside the window where the motion switches segments.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl BoundaryMotion for TrajectoryParams {
    fn boundaries(&self, t: f64) -> BoundaryState {
        self.eval(t)
    }

    fn simulation_window(&self, v_tol: f64) -> Result<(f64, f64)> {
        match self.static_window(v_tol) {
            // A cavity that never moves is evolved over a unit span around t0.
            Err(Error::DegenerateWindow { .. }) if self.max_speed() <= v_tol => {
                Ok((self.t0 - 0.5, self.t0 + self.epsilon + 0.5))
            }
            other => other,
        }
    }

    fn initial_length(&self) -> f64 {
        TrajectoryParams::initial_length(self)
    }

    fn final_length(&self) -> f64 {
        TrajectoryParams::final_length(self)
    }
}

impl BoundaryMotion for CompositeTrajectory {
    fn boundaries(&self, t: f64) -> BoundaryState {
        self.eval(t)
    }

    fn simulation_window(&self, _v_tol: f64) -> Result<(f64, f64)> {
        Ok(self.window())
    }

    fn initial_length(&self) -> f64 {
        CompositeTrajectory::initial_length(self)
    }

    fn final_length(&self) -> f64 {
        CompositeTrajectory::final_length(self)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.junctions()
    }
}
