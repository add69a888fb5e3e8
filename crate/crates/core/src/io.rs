//! CSV tables with JSON sidecars and content hashes.
//!
//! A table `name.csv` is accompanied by `name.json` holding the basis specs,
//! run parameters, the SHA-256 of the CSV bytes and the hashes of its inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bogoliubov::{BasisSpec, BogoliubovPair};
use crate::error::{Error, Result};
use crate::extrapolate::{ExtrapolatedMatrix, ExtrapolatedPair, Magnitudes};
use crate::integrator::Tolerances;

pub const PAIR_HEADER: &str = "I,J,re_alpha,im_alpha,re_beta,im_beta";
pub const EXTRAPOLATED_HEADER: &str =
    "I,J,abs2_alpha,order_alpha,converged_alpha,abs2_beta,order_beta,converged_beta";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// `pair` or `extrapolated`.
    pub format: String,
    pub cutoff: usize,
    pub in_spec: BasisSpec,
    pub out_spec: BasisSpec,
    #[serde(default)]
    pub trajectory: Option<serde_json::Value>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
    #[serde(default)]
    pub v_tol: Option<f64>,
    /// Cutoff ladder behind an extrapolated table.
    #[serde(default)]
    pub cutoffs: Vec<usize>,
    /// SHA-256 of the CSV bytes.
    #[serde(default)]
    pub content_hash: String,
    /// Content hashes of the files this one was derived from.
    #[serde(default)]
    pub lineage: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl Metadata {
    pub fn for_pair(pair: &BogoliubovPair) -> Self {
        Metadata {
            format: "pair".into(),
            cutoff: pair.cutoff(),
            in_spec: pair.in_spec,
            out_spec: pair.out_spec,
            trajectory: None,
            tolerances: None,
            v_tol: None,
            cutoffs: Vec::new(),
            content_hash: String::new(),
            lineage: Vec::new(),
            notes: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `path` with its extension replaced by `json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn write_with_sidecar(csv_path: &Path, body: String, mut meta: Metadata) -> Result<Metadata> {
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    meta.content_hash = sha256_hex(body.as_bytes());
    fs::write(csv_path, body)?;
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(sidecar_path(csv_path), json)?;
    Ok(meta)
}

pub fn read_metadata(csv_path: &Path) -> Result<Metadata> {
    let text = fs::read_to_string(sidecar_path(csv_path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn pair_csv(pair: &BogoliubovPair) -> String {
    let mut out = String::with_capacity(64 * pair.alpha.len());
    out.push_str(PAIR_HEADER);
    out.push('\n');
    for ((i, j), a) in pair.alpha.indexed_iter() {
        let b = pair.beta[[i, j]];
        let _ = writeln!(out, "{},{},{:e},{:e},{:e},{:e}", i + 1, j + 1, a.re, a.im, b.re, b.im);
    }
    out
}

/// Writes `pair` as CSV plus sidecar; fills in the size, specs and hash of `meta`.
pub fn write_pair(csv_path: &Path, pair: &BogoliubovPair, meta: Metadata) -> Result<Metadata> {
    let meta = Metadata {
        format: "pair".into(),
        cutoff: pair.cutoff(),
        in_spec: pair.in_spec,
        out_spec: pair.out_spec,
        ..meta
    };
    write_with_sidecar(csv_path, pair_csv(pair), meta)
}

fn field<T: std::str::FromStr>(s: Option<&str>, line: usize) -> Result<T> {
    let s = s.ok_or_else(|| Error::Format(format!("line {line}: missing field")))?;
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse `{s}`")))
}

fn check_header(text: &str, expected: &str) -> Result<()> {
    match text.lines().next() {
        Some(h) if h.trim() == expected => Ok(()),
        Some(h) => Err(Error::Format(format!("unexpected header `{h}`, wanted `{expected}`"))),
        None => Err(Error::Format("empty table".into())),
    }
}

fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()).map(|(k, l)| (k + 1, l))
}

/// Reads a pair table and its sidecar, verifying the content hash.
pub fn read_pair(csv_path: &Path) -> Result<(BogoliubovPair, Metadata)> {
    let meta = read_metadata(csv_path)?;
    let text = fs::read_to_string(csv_path)?;
    verify_hash(&text, &meta, csv_path)?;
    check_header(&text, PAIR_HEADER)?;
    let n = meta.cutoff;
    let mut alpha = Array2::zeros((n, n));
    let mut beta = Array2::zeros((n, n));
    let mut seen = 0usize;
    for (line, l) in rows(&text) {
        let mut it = l.split(',');
        let i: usize = field(it.next(), line)?;
        let j: usize = field(it.next(), line)?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::Format(format!("line {line}: index ({i}, {j}) outside 1..={n}")));
        }
        alpha[[i - 1, j - 1]] = Complex64::new(field(it.next(), line)?, field(it.next(), line)?);
        beta[[i - 1, j - 1]] = Complex64::new(field(it.next(), line)?, field(it.next(), line)?);
        seen += 1;
    }
    if seen != n * n {
        return Err(Error::Format(format!("{seen} rows for a {n}×{n} table")));
    }
    let pair = BogoliubovPair {
        alpha,
        beta,
        in_spec: meta.in_spec,
        out_spec: meta.out_spec,
    };
    Ok((pair, meta))
}

fn verify_hash(text: &str, meta: &Metadata, path: &Path) -> Result<()> {
    if !meta.content_hash.is_empty() && sha256_hex(text.as_bytes()) != meta.content_hash {
        return Err(Error::Format(format!(
            "{} does not match the content hash in its sidecar",
            path.display()
        )));
    }
    Ok(())
}

pub fn extrapolated_csv(ep: &ExtrapolatedPair) -> String {
    let mut out = String::new();
    out.push_str(EXTRAPOLATED_HEADER);
    out.push('\n');
    let (a, b) = (&ep.alpha2, &ep.beta2);
    for ((i, j), la) in a.limit.indexed_iter() {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{},{:e},{:e},{}",
            i + 1,
            j + 1,
            la,
            a.order[[i, j]],
            u8::from(a.converged[[i, j]]),
            b.limit[[i, j]],
            b.order[[i, j]],
            u8::from(b.converged[[i, j]])
        );
    }
    out
}

pub fn write_extrapolated(csv_path: &Path, ep: &ExtrapolatedPair, meta: Metadata) -> Result<Metadata> {
    let meta = Metadata {
        format: "extrapolated".into(),
        cutoff: ep.in_spec.cutoff,
        in_spec: ep.in_spec,
        out_spec: ep.out_spec,
        cutoffs: ep.cutoffs.clone(),
        ..meta
    };
    write_with_sidecar(csv_path, extrapolated_csv(ep), meta)
}

pub fn read_extrapolated(csv_path: &Path) -> Result<(ExtrapolatedPair, Metadata)> {
    let meta = read_metadata(csv_path)?;
    let text = fs::read_to_string(csv_path)?;
    verify_hash(&text, &meta, csv_path)?;
    check_header(&text, EXTRAPOLATED_HEADER)?;
    let n = meta.cutoff;
    let blank = || ExtrapolatedMatrix {
        limit: Array2::zeros((n, n)),
        order: Array2::zeros((n, n)),
        converged: Array2::from_elem((n, n), false),
    };
    let (mut a, mut b) = (blank(), blank());
    let mut seen = 0usize;
    for (line, l) in rows(&text) {
        let mut it = l.split(',');
        let i: usize = field(it.next(), line)?;
        let j: usize = field(it.next(), line)?;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::Format(format!("line {line}: index ({i}, {j}) outside 1..={n}")));
        }
        for m in [&mut a, &mut b] {
            m.limit[[i - 1, j - 1]] = field(it.next(), line)?;
            m.order[[i - 1, j - 1]] = field(it.next(), line)?;
            m.converged[[i - 1, j - 1]] = field::<u8>(it.next(), line)? == 1;
        }
        seen += 1;
    }
    if seen != n * n {
        return Err(Error::Format(format!("{seen} rows for a {n}×{n} table")));
    }
    let ep = ExtrapolatedPair {
        alpha2: a,
        beta2: b,
        in_spec: meta.in_spec,
        out_spec: meta.out_spec,
        cutoffs: meta.cutoffs.clone(),
    };
    Ok((ep, meta))
}

/// Squared magnitudes from either table format, chosen by the sidecar.
pub fn read_magnitudes(csv_path: &Path) -> Result<(Magnitudes, Metadata)> {
    let meta = read_metadata(csv_path)?;
    match meta.format.as_str() {
        "pair" => read_pair(csv_path).map(|(p, m)| (Magnitudes::from(&p), m)),
        "extrapolated" => read_extrapolated(csv_path).map(|(e, m)| (e.magnitudes(), m)),
        other => Err(Error::Format(format!("unknown table format `{other}`"))),
    }
}

/// Writes a plain CSV with the given header and rows; returns its content hash.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    let hash = sha256_hex(out.as_bytes());
    fs::write(path, out)?;
    Ok(hash)
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extrapolate::extrapolate_pairs;

    fn sample(n: usize) -> BogoliubovPair {
        let spec = BasisSpec::new(1.0, -0.25, n).unwrap();
        let mut p = BogoliubovPair::identity(spec);
        p.out_spec.length = 1.375;
        for ((i, j), z) in p.beta.indexed_iter_mut() {
            *z = Complex64::new(1e-3 / (1 + i + j) as f64, -1.0 / 3.0 * 1e-5 * j as f64);
        }
        p.alpha[[0, 1]] = Complex64::new(0.1, f64::MIN_POSITIVE);
        p
    }

    #[test]
    fn pair_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run/pair.csv");
        let p = sample(5);
        let meta = write_pair(&path, &p, Metadata::for_pair(&p)).unwrap();
        let (q, m) = read_pair(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(PAIR_HEADER));
        assert_eq!(text.lines().count(), 26);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pair.csv");
        let p = sample(3);
        write_pair(&path, &p, Metadata::for_pair(&p)).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("1,1,1e0", "1,1,2e0");
        fs::write(&path, text).unwrap();
        assert!(matches!(read_pair(&path), Err(Error::Format(_))));
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let p = sample(4);
        write_pair(&a, &p, Metadata::for_pair(&p)).unwrap();
        write_pair(&b, &p, Metadata::for_pair(&p)).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(sidecar_path(&a)).unwrap(), fs::read(sidecar_path(&b)).unwrap());
    }

    #[test]
    fn extrapolated_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let pairs: Vec<_> = [4, 8, 16].iter().map(|&n| sample(n)).collect();
        let ep = extrapolate_pairs(&pairs).unwrap();
        let p0 = &pairs[0];
        let mut meta = Metadata::for_pair(p0);
        meta.lineage = vec!["abc".into()];
        write_extrapolated(&path, &ep, meta).unwrap();
        let (back, m) = read_extrapolated(&path).unwrap();
        assert_eq!(m.lineage, vec!["abc".to_string()]);
        assert_eq!(back.cutoffs, vec![4, 8, 16]);
        assert_eq!(back.alpha2.converged, ep.alpha2.converged);
        for (x, y) in back.beta2.limit.iter().zip(&ep.beta2.limit) {
            assert_eq!(x, y);
        }
        let (mags, _) = read_magnitudes(&path).unwrap();
        assert_eq!(mags.size(), 4);
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = sample(2);
        write_pair(&path, &p, Metadata::for_pair(&p)).unwrap();
        let mut meta = read_metadata(&path).unwrap();
        meta.content_hash.clear();
        write_json(&sidecar_path(&path), &meta).unwrap();
        fs::write(&path, "I,J,a,b\n1,1,0,0\n").unwrap();
        assert!(read_pair(&path).is_err());
    }
}
