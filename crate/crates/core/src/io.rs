//! On-disk artifact formats: PMAT/PVEC binaries, RFC-4180 CSV, the sample
//! sidecar, the reduced-operator container, and JSON report types.
//!
//! PMAT: magic "PMAT", u32 rows, u32 cols (little-endian), then
//! column-major f64 data. PVEC: magic "PVEC", u32 n, u32 reserved, then the
//! real block followed by the imaginary block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pod::{PodBasis, PodMode, SampleQuad};
use crate::rom::RomOperators;

pub const SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.into(),
    }
}

pub fn write_pmat(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let inner = (|| -> std::io::Result<()> {
        w.write_all(b"PMAT")?;
        w.write_all(&(m.nrows() as u32).to_le_bytes())?;
        w.write_all(&(m.ncols() as u32).to_le_bytes())?;
        for v in m.iter() {
            // nalgebra iterates column-major
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    inner.map_err(io_err(path))
}

pub fn read_pmat(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(io_err(path))?;
    if &head[0..4] != b"PMAT" {
        return Err(format_err(path, "bad magic, expected PMAT"));
    }
    let rows = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf).map_err(io_err(path))?;
        *v = f64::from_le_bytes(buf);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(io_err(path))? != 0 {
        return Err(format_err(path, "trailing bytes after matrix data"));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Writes a block solution vector (length 2n: real part then imaginary
/// part) in the PVEC layout.
pub fn write_pvec(path: &Path, p: &[f64]) -> Result<()> {
    if p.len() % 2 != 0 {
        return Err(Error::InvalidArgument(
            "PVEC payload must have even length (real block + imag block)".into(),
        ));
    }
    let n = p.len() / 2;
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let inner = (|| -> std::io::Result<()> {
        w.write_all(b"PVEC")?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&[0u8; 4])?; // pad header to 16 bytes
        for v in p {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    inner.map_err(io_err(path))
}

pub fn read_pvec(path: &Path) -> Result<Vec<f64>> {
    let mut r = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(io_err(path))?;
    if &head[0..4] != b"PVEC" {
        return Err(format_err(path, "bad magic, expected PVEC"));
    }
    let n = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let mut p = vec![0.0f64; 2 * n];
    let mut buf = [0u8; 8];
    for v in p.iter_mut() {
        r.read_exact(&mut buf).map_err(io_err(path))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(p)
}

/// RFC-4180 quoting: fields with commas, quotes, or line breaks are quoted
/// and inner quotes doubled.
pub fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let inner = (|| -> std::io::Result<()> {
        writeln!(
            w,
            "{}",
            header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",")
        )?;
        for row in rows {
            writeln!(
                w,
                "{}",
                row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(",")
            )?;
        }
        w.flush()
    })();
    inner.map_err(io_err(path))
}

/// Sample sidecar: one line per snapshot column, `k,mu_r,mu_i,xi_r,xi_i`.
pub fn write_samples(path: &Path, samples: &[SampleQuad]) -> Result<()> {
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            vec![
                s.k.to_string(),
                s.mu_r.to_string(),
                s.mu_i.to_string(),
                s.xi_r.to_string(),
                s.xi_i.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["k", "mu_r", "mu_i", "xi_r", "xi_i"], &rows)
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleQuad>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 5 fields, got {}", parts.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            parts[i].trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad number {:?}", parts[i]),
            })
        };
        out.push(SampleQuad {
            k: f(0)?,
            mu_r: f(1)?,
            mu_i: f(2)?,
            xi_r: f(3)?,
            xi_i: f(4)?,
        });
    }
    Ok(out)
}

fn mode_name(mode: PodMode) -> &'static str {
    match mode {
        PodMode::Euclidean => "euclidean",
        PodMode::MassWeighted => "mass-weighted",
    }
}

fn mode_from_name(s: &str, path: &Path) -> Result<PodMode> {
    match s {
        "euclidean" => Ok(PodMode::Euclidean),
        "mass-weighted" => Ok(PodMode::MassWeighted),
        other => Err(format_err(path, format!("unknown POD mode {other:?}"))),
    }
}

#[derive(Serialize, Deserialize)]
struct RomManifest {
    schema_version: u32,
    n_modes: usize,
    mode: String,
    basis_ref: String,
    matrices: Vec<String>,
}

const ROM_MATRICES: [&str; 7] = [
    "mr", "sr", "k2r", "k2r_skew", "k4r_skew", "ir", "mr_energy",
];

/// Writes a RomOperators set as a directory of PMAT files plus a JSON
/// manifest. Load vectors are stored as N x 1 matrices.
pub fn save_rom(dir: &Path, ops: &RomOperators) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mats: [(&str, &DMatrix<f64>); 7] = [
        ("mr", &ops.mr),
        ("sr", &ops.sr),
        ("k2r", &ops.k2r),
        ("k2r_skew", &ops.k2r_skew),
        ("k4r_skew", &ops.k4r_skew),
        ("ir", &ops.ir),
        ("mr_energy", &ops.mr_energy),
    ];
    for (name, m) in mats {
        write_pmat(&dir.join(format!("{name}.pmat")), m)?;
    }
    let as_mat = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    write_pmat(&dir.join("gr_red.pmat"), &as_mat(&ops.gr_red))?;
    write_pmat(&dir.join("gi_red.pmat"), &as_mat(&ops.gi_red))?;
    let manifest = RomManifest {
        schema_version: SCHEMA_VERSION,
        n_modes: ops.n_modes,
        mode: mode_name(ops.mode).to_string(),
        basis_ref: ops.basis_ref.clone(),
        matrices: ROM_MATRICES.iter().map(|s| s.to_string()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).map_err(io_err(&path))
}

pub fn load_rom(dir: &Path) -> Result<RomOperators> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: RomManifest =
        serde_json::from_str(&text).map_err(|e| format_err(&mpath, e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(format_err(
            &mpath,
            format!("unsupported schema_version {}", manifest.schema_version),
        ));
    }
    let load = |name: &str| read_pmat(&dir.join(format!("{name}.pmat")));
    let vec_of = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
    let ops = RomOperators {
        mr: load("mr")?,
        sr: load("sr")?,
        k2r: load("k2r")?,
        k2r_skew: load("k2r_skew")?,
        k4r_skew: load("k4r_skew")?,
        ir: load("ir")?,
        mr_energy: load("mr_energy")?,
        gr_red: vec_of(load("gr_red")?),
        gi_red: vec_of(load("gi_red")?),
        n_modes: manifest.n_modes,
        mode: mode_from_name(&manifest.mode, &mpath)?,
        basis_ref: manifest.basis_ref,
    };
    if ops.mr.nrows() != ops.n_modes || ops.gr_red.len() != ops.n_modes {
        return Err(format_err(&mpath, "matrix sizes disagree with n_modes"));
    }
    Ok(ops)
}

/// Writes a POD basis: mode matrix as PMAT plus the full singular spectrum
/// as CSV.
pub fn save_basis(dir: &Path, basis: &PodBasis) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_pmat(&dir.join("basis.pmat"), &basis.z)?;
    let rows: Vec<Vec<String>> = basis
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1).to_string(), s.to_string()])
        .collect();
    write_csv(&dir.join("spectrum.csv"), &["index", "sigma"], &rows)?;
    let meta = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "mode": mode_name(basis.mode),
        "num_modes": basis.num_modes(),
    });
    let path = dir.join("basis.json");
    fs::write(&path, serde_json::to_string_pretty(&meta).unwrap()).map_err(io_err(&path))
}

pub fn load_basis(dir: &Path) -> Result<PodBasis> {
    let mpath = dir.join("basis.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let meta: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format_err(&mpath, e.to_string()))?;
    let mode = mode_from_name(
        meta["mode"].as_str().ok_or_else(|| format_err(&mpath, "missing mode"))?,
        &mpath,
    )?;
    let z = read_pmat(&dir.join("basis.pmat"))?;
    let spath = dir.join("spectrum.csv");
    let spectrum = fs::read_to_string(&spath).map_err(io_err(&spath))?;
    let mut singular_values = Vec::new();
    for (lineno, line) in spectrum.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let sigma = line.split(',').nth(1).and_then(|s| s.trim().parse().ok());
        singular_values.push(sigma.ok_or_else(|| Error::Parse {
            path: spath.clone(),
            line: lineno + 1,
            msg: "bad spectrum row".into(),
        })?);
    }
    Ok(PodBasis {
        z,
        singular_values,
        mode,
    })
}

// ---- JSON report types -------------------------------------------------

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct SnapshotManifest {
    pub schema_version: u32,
    pub sample_count: usize,
    pub mesh_nodes: usize,
    pub solver: String,
    pub workers: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct PodReport {
    pub schema_version: u32,
    pub num_modes: usize,
    pub mode: String,
    pub selection: String,
    pub energy_retained: f64,
    pub workers: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ValidateSummaryRow {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub outliers: usize,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ValidateReport {
    pub schema_version: u32,
    pub draws: usize,
    pub seed: u64,
    pub per_n: Vec<ValidateSummaryRow>,
    pub workers: usize,
    pub wall_time_s: f64,
}

/// Per-beta optimization outcome; the columns of a Table-3-style row.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct OptimizeReport {
    pub schema_version: u32,
    pub beta: f64,
    pub q: usize,
    pub seed: u64,
    pub xi_r: f64,
    pub xi_i: f64,
    pub alpha: f64,
    pub final_j: f64,
    pub iterations: usize,
    pub pde_solves: usize,
    pub termination: String,
    pub workers: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct OptimumSummary {
    pub xi_r: f64,
    pub xi_i: f64,
    pub final_j: f64,
    pub iterations: usize,
    pub pde_solves: usize,
    pub wall_time_s: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct CompareReport {
    pub schema_version: u32,
    pub k: f64,
    pub mu_r: f64,
    pub mu_i: f64,
    pub fom: OptimumSummary,
    pub rom: OptimumSummary,
    pub xi_rel_diff: f64,
    pub workers: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}
