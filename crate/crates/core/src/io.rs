//! Manifests, episode CSVs and report tables.
//!
//! Episodes are stored one per file as `p` rows of `τ` comma-separated values
//! with no header. Values are written in shortest round-trip form, so a
//! write/read cycle reproduces every bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dmd::Episode;
use crate::error::{Error, Result};
use crate::numerics::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub p: usize,
    pub classes: Vec<String>,
    pub episodes: Vec<ManifestEntry>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    atomic_write(path, &matrix_to_csv(m)?)
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(|e| {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        }
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(path, format!("row {}, column {}: `{f}`: {e}", i + 1, j + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let Some(tau) = rows.first().map(Vec::len) else {
        return Err(parse_err(path, "empty matrix"));
    };
    Ok(DMatrix::from_fn(rows.len(), tau, |i, j| rows[i][j]))
}

/// Loads every episode listed in the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let m = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if m.classes.is_empty() || m.episodes.is_empty() {
        return Err(parse_err(manifest_path, "manifest needs at least one class and one episode"));
    }
    let episodes = m
        .episodes
        .iter()
        .map(|e| {
            let path = base.join(&e.path);
            let x = read_matrix_csv(&path)?;
            if x.nrows() != m.p {
                return Err(Error::DimensionMismatch(format!(
                    "episode `{}` has {} rows, manifest declares p = {}",
                    e.id,
                    x.nrows(),
                    m.p
                )));
            }
            Episode::new(e.id.clone(), e.label, x)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(episodes, m.classes)
}

/// Writes `manifest.json` and `episodes/<id>.csv` under `dir`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let ep_dir = dir.join("episodes");
    fs::create_dir_all(&ep_dir)?;
    let mut entries = Vec::with_capacity(ds.len());
    for e in ds.episodes() {
        let rel = format!("episodes/{}.csv", e.id());
        write_matrix_csv(&dir.join(&rel), e.snapshots())?;
        entries.push(ManifestEntry { id: e.id().to_string(), path: rel, label: e.label() });
    }
    let manifest = Manifest { p: ds.p(), classes: ds.class_names().to_vec(), episodes: entries };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Builds a CSV with a header row.
pub fn table<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    atomic_write(path, &table(header, rows)?)
}

/// One row group of the eigenvalue table.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenRecord {
    pub id: String,
    pub label: usize,
    pub theta: Vec<C64>,
}

pub const EIGENVALUE_HEADER: [&str; 5] = ["id", "label", "mode", "re", "im"];

pub fn write_eigenvalues(path: &Path, records: &[EigenRecord]) -> Result<()> {
    let rows = records.iter().flat_map(|r| {
        r.theta.iter().enumerate().map(move |(j, z)| {
            vec![r.id.clone(), r.label.to_string(), (j + 1).to_string(), z.re.to_string(), z.im.to_string()]
        })
    });
    write_table(path, &EIGENVALUE_HEADER, rows)
}

/// Reads an eigenvalue table; modes must appear as `1..=r` in order per episode.
pub fn read_eigenvalues(path: &Path) -> Result<Vec<EigenRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let header = rdr.headers().map_err(|e| parse_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != EIGENVALUE_HEADER {
        return Err(parse_err(path, format!("expected header {}", EIGENVALUE_HEADER.join(","))));
    }
    let mut out: Vec<EigenRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        let bad = |what: &str| parse_err(path, format!("row {}: bad {what}", i + 2));
        let id = rec[0].to_string();
        let label: usize = rec[1].parse().map_err(|_| bad("label"))?;
        let mode: usize = rec[2].parse().map_err(|_| bad("mode"))?;
        let re: f64 = rec[3].parse().map_err(|_| bad("re"))?;
        let im: f64 = rec[4].parse().map_err(|_| bad("im"))?;
        match out.last_mut() {
            Some(last) if last.id == id => {
                if mode != last.theta.len() + 1 || label != last.label {
                    return Err(bad("mode order or label"));
                }
                last.theta.push(C64::new(re, im));
            }
            _ => {
                if mode != 1 {
                    return Err(bad("mode order"));
                }
                out.push(EigenRecord { id, label, theta: vec![C64::new(re, im)] });
            }
        }
    }
    Ok(out)
}
