//! Flat `key = value` run configuration.
//!
//! A config file holds one key per line with `#` comments. Every key is also a
//! `--key value` flag; flags override the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use cavity_core::spectra::Band;
use cavity_core::{Family, Tolerances, TrajectoryParams};
use clap::Args;

use crate::error::{CliError, CliResult};

macro_rules! options {
    ($($field:ident = $key:literal : $help:literal),* $(,)?) => {
        /// Every configuration key as an optional flag.
        #[derive(Debug, Default, Clone, Args)]
        pub struct Options {
            /// Configuration file with `key = value` lines.
            #[arg(long, value_name = "PATH", global = true)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long = $key, value_name = "VALUE", help = $help, global = true)]
                pub $field: Option<String>,
            )*
        }

        impl Options {
            fn entries(&self) -> Vec<(&'static str, Option<&str>)> {
                vec![$(($key, self.$field.as_deref())),*]
            }
        }

        pub const KEYS: &[&str] = &[$($key),*];
    };
}

options! {
    family = "family": "Trajectory family: one-mirror, symmetric or rigid",
    epsilon = "epsilon": "Change of cavity size",
    kappa = "kappa": "Acceleration parameter",
    t0 = "t0": "Onset of the acceleration",
    l0 = "l0": "Initial cavity length",
    reversed = "reversed": "Run the time-reversed (collapsing) trajectory",
    n = "n": "Comma-separated ascending cutoffs",
    abs_tol = "abs-tol": "Absolute integration tolerance",
    rel_tol = "rel-tol": "Relative integration tolerance",
    max_steps = "max-steps": "Step limit per integration leg",
    v_tol = "v-tol": "Boundary speed below which the cavity counts as static",
    chunk = "chunk": "Basis columns integrated together (0 = all)",
    parity_split = "parity-split": "Evolve odd and even modes separately (symmetric pair only)",
    checkpoints = "checkpoints": "Basis norm checks during the run",
    out = "out": "Output directory",
    target = "target": "Fit target: beta or alpha",
    norm = "norm": "Model normalization constant",
    band_i = "band-i": "In-mode band `lo,hi` for fits and detailed balance",
    band_j = "band-j": "Out-mode band `lo,hi` for fits and detailed balance",
    fix_a = "fix-a": "Hold A at this value",
    fix_b = "fix-b": "Hold B at this value",
    fix_c = "fix-c": "Hold C at this value",
    fix_d1 = "fix-d1": "Hold D1 at this value",
    fix_d2 = "fix-d2": "Hold D2 at this value",
    fix_f = "fix-f": "Hold F at this value",
    fix_kappa_tilde = "fix-kappa-tilde": "Hold the effective acceleration at this value",
    pole_window = "pole-window": "Pole exclusion half-width in out-gap units",
    max_condition = "max-condition": "Largest accepted covariance condition number",
    fit = "fit": "Comma-separated fit records",
    d1 = "d1": "Pole weight for the thermality function",
    f = "f": "Resonance factor for the thermality function",
    floor = "floor": "Smallest |beta| treated as nonzero",
    infrared_ratio = "infrared-ratio": "Detailed balance keeps omega_J <= ratio * F * omega_I",
    thermal_i = "thermal-i": "In-mode band for the thermality summary",
    thermal_j = "thermal-j": "Out-mode band for the thermality summary",
    tail_i = "tail-i": "Comma-separated in modes for tail fits",
    tail_j = "tail-j": "Out-mode band `lo,hi` for tail fits",
    cycles = "cycles": "Number of cycles",
    mode = "mode": "Cycle mode: symmetric, asymmetric or closed",
    second = "second": "Second pair file for asymmetric cycles",
    cap = "cap": "Largest coefficient magnitude before cycles stop",
}

/// Parses `key = value` text. Unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", k + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::config(format!("line {}: unknown key `{key}`", k + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!("line {}: `{key}` set twice", k + 1)));
        }
    }
    Ok(map)
}

/// Merged file and flag values.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(opts: &Options) -> CliResult<Self> {
        let mut values = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        for (key, value) in opts.entries() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.to_string());
            }
        }
        Ok(Settings { values })
    }

    #[cfg(test)]
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Settings {
            values: pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::config(format!("`{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(CliError::config(format!("`{key}`: `{v}` is not a boolean"))),
            },
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| CliError::config(format!("`{key}`: cannot parse `{s}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// An inclusive `lo,hi` range.
    pub fn range(&self, key: &str) -> CliResult<Option<(usize, usize)>> {
        match self.list::<usize>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 && v[0] >= 1 && v[0] <= v[1] => Ok(Some((v[0], v[1]))),
            Some(v) => Err(CliError::config(format!("`{key}`: {v:?} is not a range `lo,hi` with 1 <= lo <= hi"))),
        }
    }

    /// Band from `<prefix>-i` and `<prefix>-j`, falling back to `default` per axis.
    pub fn band(&self, prefix: &str, default: Band) -> CliResult<Band> {
        let i = self.range(&format!("{prefix}-i"))?.unwrap_or(default.i);
        let j = self.range(&format!("{prefix}-j"))?.unwrap_or(default.j);
        Band::new(i, j).map_err(|e| CliError::config(e.to_string()))
    }
}

/// Everything needed to launch simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trajectory: TrajectoryParams,
    pub cutoffs: Vec<usize>,
    pub tolerances: Tolerances,
    pub v_tol: f64,
    pub chunk: usize,
    pub parity_split: bool,
    pub checkpoints: usize,
    pub out: PathBuf,
}

pub const DEFAULT_CUTOFFS: [usize; 3] = [64, 128, 256];
pub const DEFAULT_EPSILON: f64 = 0.375;
pub const DEFAULT_KAPPA: f64 = 33.3;

impl RunConfig {
    pub fn from_settings(s: &Settings) -> CliResult<Self> {
        let family: Family = s
            .raw("family")
            .unwrap_or("one-mirror")
            .parse()
            .map_err(|e: cavity_core::Error| CliError::config(e.to_string()))?;
        let mut trajectory = TrajectoryParams::new(
            family,
            s.get_or("epsilon", DEFAULT_EPSILON)?,
            s.get_or("kappa", DEFAULT_KAPPA)?,
            s.get_or("t0", 0.0)?,
            s.get_or("l0", 1.0)?,
        )
        .map_err(|e| CliError::config(e.to_string()))?;
        if s.flag("reversed")? {
            trajectory = trajectory.time_reverse();
        }
        let defaults = Tolerances::default();
        let tolerances = Tolerances {
            abs_tol: s.get_or("abs-tol", defaults.abs_tol)?,
            rel_tol: s.get_or("rel-tol", defaults.rel_tol)?,
            max_steps: s.get_or("max-steps", defaults.max_steps)?,
        };
        tolerances.validate().map_err(|e| CliError::config(e.to_string()))?;
        let cutoffs = s.list("n")?.unwrap_or_else(|| DEFAULT_CUTOFFS.to_vec());
        let cfg = RunConfig {
            trajectory,
            cutoffs,
            tolerances,
            v_tol: s.get_or("v-tol", cavity_core::trajectory::DEFAULT_V_TOL)?,
            chunk: s.get_or("chunk", 0)?,
            parity_split: s.flag("parity-split")?,
            checkpoints: s.get_or("checkpoints", 0)?,
            out: out_dir(s)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(CliError::config("`n` needs at least one positive cutoff"));
        }
        if self.cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config(format!("`n` = {:?} is not strictly ascending", self.cutoffs)));
        }
        if !(self.v_tol > 0.0 && self.v_tol < 1.0) {
            return Err(CliError::config(format!("`v-tol` = {} is not in (0, 1)", self.v_tol)));
        }
        if self.parity_split && self.trajectory.family != Family::SymmetricPair {
            return Err(CliError::config("`parity-split` is only valid for the symmetric family"));
        }
        Ok(())
    }

    /// Whether the cutoffs form a ladder fit for extrapolation.
    pub fn extrapolation_ladder(&self) -> bool {
        self.cutoffs.len() >= 3 && self.cutoffs.windows(2).all(|w| w[1] == 2 * w[0])
    }
}

pub fn out_dir(s: &Settings) -> CliResult<PathBuf> {
    Ok(s.get::<PathBuf>("out")?.unwrap_or_else(|| PathBuf::from(".")))
}

pub fn read_path_list(s: &Settings, key: &str) -> CliResult<Vec<PathBuf>> {
    Ok(s.list::<PathBuf>(key)?.unwrap_or_default())
}
