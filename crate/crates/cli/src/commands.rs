use std::path::{Path, PathBuf};

use cavity_core::bogoliubov::{compose, cycle, cycle_sequence, return_leg, DEFAULT_INSTABILITY_CAP};
use cavity_core::extrapolate::extrapolate_pairs;
use cavity_core::io::{self, Metadata};
use cavity_core::spectra::{
    alpha_model, beta_model, detailed_balance_slope_where, fit_alpha, fit_beta, tail_exponent_where, thermality,
    well_below_resonance, AlphaFit, AlphaFitConfig, AlphaFixed, Band, BetaFit, BetaFitConfig, DetailedBalance,
    FrequencyGrid, GrayBodyFixed, TailFit, DEFAULT_FLOOR, DEFAULT_INFRARED_RATIO, DEFAULT_MAX_CONDITION,
    DEFAULT_POLE_WINDOW,
};
use cavity_core::{simulate, BogoliubovPair, Error, ExtrapolatedPair, Magnitudes, SimulationConfig, TrajectoryParams};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{out_dir, read_path_list, RunConfig, Settings, DEFAULT_EPSILON, DEFAULT_KAPPA};
use crate::error::{CliError, CliResult};

/// Normalization of the gray-body models.
pub const DEFAULT_NORM: f64 = 2.0;

pub fn pair_file_name(cutoff: usize) -> String {
    format!("pair_n{cutoff}.csv")
}

fn lineage(parents: &[&Metadata]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in parents {
        for h in std::iter::once(&m.content_hash).chain(&m.lineage) {
            if !out.contains(h) {
                out.push(h.clone());
            }
        }
    }
    out
}

/// Writes a derived table with a sidecar naming its lineage.
fn write_derived(path: &Path, header: &str, rows: &[Vec<String>], parent: &Metadata, format: &str) -> CliResult<()> {
    let hash = io::write_table(path, header, rows)?;
    let meta = Metadata {
        format: format.into(),
        content_hash: hash,
        lineage: lineage(&[parent]),
        notes: Default::default(),
        ..parent.clone()
    };
    io::write_json(&io::sidecar_path(path), &meta)?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn trajectory_of(meta: &Metadata) -> Option<TrajectoryParams> {
    meta.trajectory
        .as_ref()
        .and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// `kappa` and `epsilon` from flags, else from the input's trajectory record.
fn model_scales(s: &Settings, meta: &Metadata) -> CliResult<(f64, f64)> {
    let traj = trajectory_of(meta);
    let kappa = s.get("kappa")?.or(traj.map(|t| t.kappa)).unwrap_or(DEFAULT_KAPPA);
    let epsilon = s.get("epsilon")?.or(traj.map(|t| t.epsilon)).unwrap_or(DEFAULT_EPSILON);
    Ok((kappa, epsilon))
}

/// Cutoff that sets the resolved range: the coarsest one behind the table.
fn coarsest(meta: &Metadata) -> usize {
    meta.cutoffs.first().copied().unwrap_or(meta.cutoff)
}

/// Infrared block quoted for cutoff 256, rescaled.
fn infrared_band(cutoff: usize) -> CliResult<Band> {
    Band::scaled((20, 100), (20, 100), cutoff).map_err(|e| CliError::config(e.to_string()))
}

fn resolved_j(cutoff: usize) -> usize {
    (3 * cutoff / 4).max(1)
}

fn check_band(band: &Band, size: usize, key: &str) -> CliResult<()> {
    band.check(size)
        .map_err(|_| CliError::config(format!("`{key}` band {band:?} exceeds the table size {size}")))
}

/// Squared magnitudes plus convergence flags when the table is extrapolated.
struct Table {
    mags: Magnitudes,
    extrapolated: Option<ExtrapolatedPair>,
    meta: Metadata,
}

impl Table {
    fn read(path: &Path) -> CliResult<Self> {
        let meta = io::read_metadata(path)?;
        if meta.format == "extrapolated" {
            let (x, meta) = io::read_extrapolated(path)?;
            Ok(Table { mags: x.magnitudes(), extrapolated: Some(x), meta })
        } else {
            let (mags, meta) = io::read_magnitudes(path)?;
            Ok(Table { mags, extrapolated: None, meta })
        }
    }

    fn converged(&self, i: usize, j: usize) -> bool {
        self.extrapolated.as_ref().is_none_or(|x| x.converged(i, j))
    }

    fn grid(&self) -> FrequencyGrid {
        FrequencyGrid::from_specs(&self.mags.in_spec, &self.mags.out_spec)
    }
}

fn single_input(inputs: &[PathBuf], command: &str) -> CliResult<PathBuf> {
    match inputs {
        [one] => Ok(one.clone()),
        _ => Err(CliError::config(format!("`{command}` takes exactly one input table, got {}", inputs.len()))),
    }
}

pub fn cmd_simulate(s: &Settings) -> CliResult<Vec<PathBuf>> {
    let cfg = RunConfig::from_settings(s)?;
    let runs: Vec<(usize, cavity_core::SimulationOutput)> = cfg
        .cutoffs
        .par_iter()
        .map(|&n| {
            let sim = SimulationConfig {
                cutoff: n,
                tolerances: cfg.tolerances,
                v_tol: cfg.v_tol,
                chunk: cfg.chunk,
                parity_split: cfg.parity_split,
                checkpoints: cfg.checkpoints,
            };
            info!("simulating N = {n}");
            simulate(&cfg.trajectory, &sim).map(|out| (n, out)).map_err(|e| match e {
                Error::Divergence { .. } | Error::NonConvergence { .. } => CliError::Numerical(e),
                other => CliError::Core(other),
            })
        })
        .collect::<CliResult<_>>()?;
    let mut written = Vec::new();
    for (n, out) in runs {
        let mut meta = Metadata::for_pair(&out.pair);
        meta.trajectory = Some(serde_json::to_value(cfg.trajectory).map_err(Error::from)?);
        meta.tolerances = Some(cfg.tolerances);
        meta.v_tol = Some(cfg.v_tol);
        meta.notes.insert("stats".into(), serde_json::to_value(out.stats).map_err(Error::from)?);
        meta.notes.insert("window".into(), json!([out.window.0, out.window.1]));
        meta.notes.insert("residual_speed".into(), json!(out.residual_speed));
        if let Some(worst) = out.checkpoints.iter().map(|c| c.max_norm_error).reduce(f64::max) {
            meta.notes.insert("max_norm_error".into(), json!(worst));
        }
        let path = cfg.out.join(pair_file_name(n));
        io::write_pair(&path, &out.pair, meta)?;
        println!("N = {n}: max|beta| = {:.6e} -> {}", out.pair.max_abs_beta(), path.display());
        written.push(path);
    }
    if cfg.cutoffs.len() >= 3 && !cfg.extrapolation_ladder() {
        warn!("cutoffs {:?} are not a ratio-2 ladder and cannot be extrapolated", cfg.cutoffs);
    }
    Ok(written)
}

pub fn cmd_extrapolate(s: &Settings, inputs: &[PathBuf]) -> CliResult<PathBuf> {
    if inputs.len() < 3 {
        return Err(CliError::config(format!("extrapolation needs 3 pair files, got {}", inputs.len())));
    }
    let loaded: Vec<(BogoliubovPair, Metadata)> = inputs
        .iter()
        .map(|p| io::read_pair(p))
        .collect::<cavity_core::Result<_>>()?;
    let (_, first) = &loaded[0];
    for (path, (_, m)) in inputs.iter().zip(&loaded).skip(1) {
        if m.trajectory != first.trajectory || m.tolerances != first.tolerances || m.v_tol != first.v_tol {
            return Err(CliError::config(format!(
                "{} was produced with a different configuration than {}",
                path.display(),
                inputs[0].display()
            )));
        }
    }
    let pairs: Vec<BogoliubovPair> = loaded.iter().map(|(p, _)| p.clone()).collect();
    let x = extrapolate_pairs(&pairs).map_err(|e| match e {
        Error::InvalidParameter { .. } | Error::BasisMismatch(_) | Error::InsufficientData(_) => {
            CliError::config(e.to_string())
        }
        other => CliError::Core(other),
    })?;
    let metas: Vec<&Metadata> = loaded.iter().map(|(_, m)| m).collect();
    let meta = Metadata {
        lineage: lineage(&metas),
        notes: Default::default(),
        ..first.clone()
    };
    let path = out_dir(s)?.join("extrapolated.csv");
    io::write_extrapolated(&path, &x, meta)?;

    let band = s.band("band", infrared_band(x.cutoffs[0])?)?;
    check_band(&band, x.in_spec.cutoff, "band")?;
    let fa = x.alpha2.converged_fraction(band.i, band.j);
    let fb = x.beta2.converged_fraction(band.i, band.j);
    println!(
        "cutoffs {:?}: converged in band I {:?} J {:?}: alpha {:.1}%, beta {:.1}% -> {}",
        x.cutoffs,
        band.i,
        band.j,
        100.0 * fa,
        100.0 * fb,
        path.display()
    );
    if fa == 0.0 && fb == 0.0 {
        return Err(CliError::NotConverged(format!(
            "no entry in band I {:?} J {:?} converged",
            band.i, band.j
        )));
    }
    Ok(path)
}

/// A saved fit with its inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub target: String,
    pub input: String,
    pub input_hash: String,
    pub lineage: Vec<String>,
    pub kappa: f64,
    pub epsilon: f64,
    pub band: Band,
    pub residual: f64,
    pub condition: f64,
    pub points: usize,
    #[serde(default)]
    pub beta: Option<BetaFit>,
    #[serde(default)]
    pub alpha: Option<AlphaFit>,
    pub alpha_config: Option<AlphaFitConfig>,
    pub beta_config: Option<BetaFitConfig>,
}

/// A fit record and the hash of its bytes.
pub fn read_fit(path: &Path) -> CliResult<(FitRecord, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read fit record {}: {e}", path.display())))?;
    let rec = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{} is not a fit record: {e}", path.display())))?;
    Ok((rec, io::sha256_hex(text.as_bytes())))
}

pub fn cmd_fit(s: &Settings, inputs: &[PathBuf]) -> CliResult<PathBuf> {
    let input = single_input(inputs, "fit")?;
    let table = Table::read(&input)?;
    let (kappa, epsilon) = model_scales(s, &table.meta)?;
    let norm = s.get_or("norm", DEFAULT_NORM)?;
    let max_condition = s.get_or("max-condition", DEFAULT_MAX_CONDITION)?;
    let target = s.raw("target").unwrap_or("beta").to_ascii_lowercase();
    let n = coarsest(&table.meta);
    let infrared = infrared_band(n)?;
    let grid = table.grid();
    let base = FitRecord {
        target: target.clone(),
        input: input.display().to_string(),
        input_hash: table.meta.content_hash.clone(),
        lineage: lineage(&[&table.meta]),
        kappa,
        epsilon,
        band: infrared,
        residual: f64::NAN,
        condition: f64::NAN,
        points: 0,
        beta: None,
        alpha: None,
        alpha_config: None,
        beta_config: None,
    };
    let record = match target.as_str() {
        "beta" => {
            let band = s.band("band", infrared)?;
            check_band(&band, table.mags.size(), "band")?;
            let mut cfg = BetaFitConfig::new(kappa, epsilon, norm);
            cfg.max_condition = max_condition;
            cfg.fixed = GrayBodyFixed {
                a: s.get("fix-a")?,
                b: s.get("fix-b")?,
                c: s.get("fix-c")?,
            };
            let fit = fit_beta(&table.mags.beta2, &grid, &band, &cfg).map_err(CliError::from_fit)?;
            println!(
                "beta fit: A = {:.4e}, B = {:.4e}, C = {:.4}, residual {:.3e}, {} points",
                fit.params.a, fit.params.b, fit.params.c, fit.residual, fit.points
            );
            FitRecord {
                band,
                residual: fit.residual,
                condition: fit.condition,
                points: fit.points,
                beta: Some(fit),
                beta_config: Some(cfg),
                ..base
            }
        }
        "alpha" => {
            let band = s.band("band", Band::new(infrared.i, (1, resolved_j(n))).map_err(CliError::from)?)?;
            check_band(&band, table.mags.size(), "band")?;
            let mut cfg = AlphaFitConfig::new(kappa, epsilon, norm);
            cfg.max_condition = max_condition;
            cfg.pole_window = s.get_or("pole-window", DEFAULT_POLE_WINDOW)?;
            cfg.fixed = AlphaFixed {
                a: s.get("fix-a")?,
                b: s.get("fix-b")?,
                c: s.get("fix-c")?,
                d1: s.get("fix-d1")?,
                d2: s.get("fix-d2")?,
                f: s.get("fix-f")?,
                kappa_tilde: s.get("fix-kappa-tilde")?,
            };
            let fit = fit_alpha(&table.mags.alpha2, &grid, &band, &cfg).map_err(CliError::from_fit)?;
            println!(
                "alpha fit: kappa~/kappa = {:.4}, F = {:.4}, D1 = {:.4}, D2 = {:.4}, residual {:.3e}, {} points",
                fit.params.kappa_tilde / kappa,
                fit.params.f,
                fit.params.d1,
                fit.params.d2,
                fit.residual,
                fit.points
            );
            FitRecord {
                band,
                residual: fit.residual,
                condition: fit.condition,
                points: fit.points,
                alpha: Some(fit),
                alpha_config: Some(cfg),
                ..base
            }
        }
        other => return Err(CliError::config(format!("`target` must be beta or alpha, not `{other}`"))),
    };
    let path = out_dir(s)?.join(format!("fit_{target}.json"));
    io::write_json(&path, &record)?;
    println!("-> {}", path.display());
    Ok(path)
}

/// Pole weight and resonance factor from fixed keys or an `alpha` fit record.
fn thermal_params(s: &Settings) -> CliResult<(f64, f64, Vec<String>)> {
    if let (Some(d1), Some(f)) = (s.get::<f64>("d1")?, s.get::<f64>("f")?) {
        return Ok((d1, f, Vec::new()));
    }
    for path in read_path_list(s, "fit")? {
        let (rec, hash) = read_fit(&path)?;
        if let Some(a) = rec.alpha {
            let d1 = s.get("d1")?.unwrap_or(a.params.d1);
            let f = s.get("f")?.unwrap_or(a.params.f);
            let mut lin = vec![hash];
            lin.extend(rec.lineage);
            return Ok((d1, f, lin));
        }
    }
    Err(CliError::config(
        "missing fit record: pass `--fit` with an alpha fit, or both `--d1` and `--f`",
    ))
}

#[derive(Debug, Serialize)]
struct DetailedBalanceReport {
    input: String,
    lineage: Vec<String>,
    kappa: f64,
    band: Band,
    infrared_ratio: f64,
    f: f64,
    converged_only: bool,
    result: Option<DetailedBalance>,
    error: Option<String>,
    thermal_band: Band,
    thermality_range: Option<(f64, f64)>,
}

pub fn cmd_diagnose(s: &Settings, inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let input = single_input(inputs, "diagnose")?;
    let (d1, f, fit_lineage) = thermal_params(s)?;
    let table = Table::read(&input)?;
    let (kappa, _) = model_scales(s, &table.meta)?;
    let floor = s.get_or("floor", DEFAULT_FLOOR)?;
    let ratio = s.get_or("infrared-ratio", DEFAULT_INFRARED_RATIO)?;
    let size = table.mags.size();
    let n = coarsest(&table.meta);
    let grid = table.grid();
    let out = out_dir(s)?;
    let mut parent = table.meta.clone();
    parent.lineage.extend(fit_lineage);

    let therm = thermality(&table.mags, d1, f, kappa, floor);
    let rows: Vec<Vec<String>> = therm
        .values
        .indexed_iter()
        .map(|((i, j), t)| {
            vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(grid.omega_in(i + 1)),
                num(grid.omega_out(j + 1)),
                num(*t),
            ]
        })
        .collect();
    let therm_path = out.join("thermality.csv");
    write_derived(&therm_path, "I,J,omega_in,omega_out,T", &rows, &parent, "thermality")?;

    let band = s.band("band", infrared_band(n)?)?;
    check_band(&band, size, "band")?;
    let below = well_below_resonance(grid, f, ratio);
    let db = detailed_balance_slope_where(&table.mags, kappa, &band, floor, |i, j| {
        below(i, j) && table.converged(i, j)
    });
    let thermal_band = s.band("thermal", Band::new((10, 30), (1, 8)).map_err(CliError::from)?)?;
    let thermal_range = if thermal_band.check(size).is_ok() { therm.range(&thermal_band) } else { None };
    let report = DetailedBalanceReport {
        input: input.display().to_string(),
        lineage: lineage(&[&parent]),
        kappa,
        band,
        infrared_ratio: ratio,
        f,
        converged_only: table.extrapolated.is_some(),
        result: db.as_ref().ok().copied(),
        error: db.as_ref().err().map(|e| e.to_string()),
        thermal_band,
        thermality_range: thermal_range,
    };
    let db_path = out.join("detailed_balance.json");
    io::write_json(&db_path, &report)?;
    match &db {
        Ok(d) => println!(
            "detailed balance: slope {:.4} vs 2pi/kappa {:.4} ({:+.1}%), {} points",
            d.slope,
            d.expected,
            100.0 * d.relative_error,
            d.points
        ),
        Err(e) => println!("detailed balance: {e}"),
    }

    let tail_rows_i: Vec<usize> = s.list("tail-i")?.unwrap_or_else(|| vec![1]);
    let default_tail = {
        let start = (1..=size).find(|&j| grid.omega_out(j) >= kappa).unwrap_or(1);
        (start, resolved_j(n).min(size).max(start))
    };
    let tail_j = s.range("tail-j")?.unwrap_or(default_tail);
    if tail_j.1 > size {
        return Err(CliError::config(format!("`tail-j` {tail_j:?} exceeds the table size {size}")));
    }
    let mut tail_rows = Vec::new();
    for &i in &tail_rows_i {
        if i == 0 || i > size {
            return Err(CliError::config(format!("`tail-i` mode {i} outside 1..={size}")));
        }
        let row = table.mags.beta2.row(i - 1).to_vec();
        let fit: Result<TailFit, Error> = tail_exponent_where(&row, &grid, tail_j, |j| table.converged(i, j));
        match &fit {
            Ok(t) => println!("tail I = {i}, J {}-{}: n = {:.3} ({} points)", tail_j.0, tail_j.1, t.exponent, t.points),
            Err(e) => warn!("tail I = {i}: {e}"),
        }
        let (e, r, p) = fit.map_or((f64::NAN, f64::NAN, 0), |t| (t.exponent, t.residual, t.points));
        tail_rows.push(vec![
            i.to_string(),
            tail_j.0.to_string(),
            tail_j.1.to_string(),
            num(e),
            num(r),
            p.to_string(),
        ]);
    }
    let tail_path = out.join("tail.csv");
    write_derived(&tail_path, "I,j_lo,j_hi,exponent,residual,points", &tail_rows, &parent, "tail")?;
    println!("-> {}, {}, {}", therm_path.display(), db_path.display(), tail_path.display());
    Ok(vec![therm_path, db_path, tail_path])
}

pub fn cmd_cycles(s: &Settings, inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let input = single_input(inputs, "cycles")?;
    let (pair, meta) = io::read_pair(&input)?;
    let count: usize = s.get_or("cycles", 1)?;
    if count == 0 {
        return Err(CliError::config("`cycles` must be at least 1"));
    }
    let cap = s.get_or("cap", DEFAULT_INSTABILITY_CAP)?;
    let mut parents = vec![meta.clone()];
    let base = match s.raw("mode").unwrap_or("symmetric") {
        "symmetric" => cycle(&pair),
        "asymmetric" => {
            let second = s
                .get::<PathBuf>("second")?
                .ok_or_else(|| CliError::config("asymmetric cycles need `--second <pair file>`"))?;
            let (back, back_meta) = io::read_pair(&second)?;
            parents.push(back_meta);
            if !pair.out_spec.same_cavity(&back.out_spec) || !pair.in_spec.same_cavity(&back.in_spec) {
                return Err(CliError::config("the second pair must span the same cavity lengths as the first"));
            }
            compose(&pair, &return_leg(&back))?
        }
        "closed" => pair.clone(),
        other => {
            return Err(CliError::config(format!(
                "`mode` must be symmetric, asymmetric or closed, not `{other}`"
            )))
        }
    };
    if !base.in_spec.same_cavity(&base.out_spec) {
        return Err(CliError::config("a cycle must return to its initial cavity length"));
    }
    let (seq, failure) = cycle_sequence(&base, count, cap);
    let out = out_dir(s)?;
    let refs: Vec<&Metadata> = parents.iter().collect();
    let mut written = Vec::new();
    let mut growth = Vec::new();
    let first_beta = seq.first().map(BogoliubovPair::max_abs_beta);
    for (k, p) in seq.iter().enumerate() {
        let mut m = Metadata::for_pair(p);
        m.trajectory = meta.trajectory.clone();
        m.tolerances = meta.tolerances;
        m.v_tol = meta.v_tol;
        m.lineage = lineage(&refs);
        m.notes.insert("cycle".into(), json!(k + 1));
        let path = out.join(format!("cycle_{}.csv", k + 1));
        io::write_pair(&path, p, m)?;
        written.push(path);
        let b = p.max_abs_beta();
        growth.push(vec![
            (k + 1).to_string(),
            num(p.max_abs_alpha()),
            num(b),
            num(first_beta.map_or(f64::NAN, |f| b / f)),
        ]);
        println!("cycle {}: max|beta| = {b:.6e}", k + 1);
    }
    let growth_path = out.join("growth.csv");
    let mut parent = meta.clone();
    parent.lineage = lineage(&refs);
    write_derived(&growth_path, "cycle,max_abs_alpha,max_abs_beta,beta_ratio_to_first", &growth, &parent, "growth")?;
    written.push(growth_path);
    if let Some(e) = failure {
        return Err(CliError::Numerical(e));
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    input: String,
    lineage: Vec<String>,
    cutoff: usize,
    cutoffs: Vec<usize>,
    max_abs2_beta: f64,
    total_abs2_beta: f64,
    converged_alpha: Option<f64>,
    converged_beta: Option<f64>,
    models: Vec<String>,
}

pub fn cmd_report(s: &Settings, inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let input = single_input(inputs, "report")?;
    let table = Table::read(&input)?;
    let grid = table.grid();
    let mut beta_fit: Option<BetaFit> = None;
    let mut alpha_fit: Option<(AlphaFit, f64)> = None;
    let mut parent = table.meta.clone();
    for path in read_path_list(s, "fit")? {
        let (rec, hash) = read_fit(&path)?;
        parent.lineage.push(hash);
        if let Some(b) = rec.beta {
            beta_fit = Some(b);
        }
        if let Some(a) = rec.alpha {
            let window = rec.alpha_config.map_or(DEFAULT_POLE_WINDOW, |c| c.pole_window);
            alpha_fit = Some((a, window));
        }
    }
    let mut header = String::from("I,J,omega_in,omega_out,abs2_alpha,abs2_beta,converged_alpha,converged_beta");
    let mut models = Vec::new();
    if beta_fit.is_some() {
        header.push_str(",model_beta");
        models.push("beta".to_string());
    }
    if alpha_fit.is_some() {
        header.push_str(",model_alpha");
        models.push("alpha".to_string());
    }
    let x = table.extrapolated.as_ref();
    let rows: Vec<Vec<String>> = table
        .mags
        .beta2
        .indexed_iter()
        .map(|((i0, j0), b2)| {
            let (i, j) = (i0 + 1, j0 + 1);
            let flag = |m: Option<&cavity_core::extrapolate::ExtrapolatedMatrix>| {
                m.map_or("1".to_string(), |m| u8::from(m.converged[[i0, j0]]).to_string())
            };
            let mut row = vec![
                i.to_string(),
                j.to_string(),
                num(grid.omega_in(i)),
                num(grid.omega_out(j)),
                num(table.mags.alpha2[[i0, j0]]),
                num(*b2),
                flag(x.map(|x| &x.alpha2)),
                flag(x.map(|x| &x.beta2)),
            ];
            if let Some(b) = &beta_fit {
                row.push(num(beta_model(&b.params, &grid, i, j)));
            }
            if let Some((a, w)) = &alpha_fit {
                row.push(num(alpha_model(&a.params, &grid, i, j, w * grid.gap_out()).unwrap_or(f64::NAN)));
            }
            row
        })
        .collect();
    let out = out_dir(s)?;
    let csv = out.join("report.csv");
    write_derived(&csv, &header, &rows, &parent, "report")?;
    let n = table.mags.size();
    let summary = ReportSummary {
        input: input.display().to_string(),
        lineage: lineage(&[&parent]),
        cutoff: n,
        cutoffs: table.meta.cutoffs.clone(),
        max_abs2_beta: table.mags.beta2.iter().copied().fold(0.0, f64::max),
        total_abs2_beta: table.mags.beta2.sum(),
        converged_alpha: x.map(|x| x.alpha2.converged_fraction((1, n), (1, n))),
        converged_beta: x.map(|x| x.beta2.converged_fraction((1, n), (1, n))),
        models,
    };
    let json_path = out.join("summary.json");
    io::write_json(&json_path, &summary)?;
    println!("-> {}, {}", csv.display(), json_path.display());
    Ok(vec![csv, json_path])
}
