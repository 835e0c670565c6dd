//! File formats: CSV inputs/outputs, JSON artifacts and the run manifest.

use bose_kms::model::{FieldKind, GridSpec, LatticeField};
use bose_kms::{KmsError, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn numeric_rows(path: &Path, width: usize) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| KmsError::Input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| KmsError::Input(format!("{}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(KmsError::Input(format!("{}: row {} has {} columns, expected {width}", path.display(), i + 1, rec.len())));
        }
        // a non-numeric first row is a header
        if i == 0 && rec[0].parse::<f64>().is_err() {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse().map_err(|_| KmsError::Input(format!("{}: cannot parse '{s}'", path.display())))
}

/// (site index, time index, value) rows; unlisted entries are zero.
pub fn read_field(path: &Path, grid: &GridSpec) -> Result<LatticeField> {
    let mut rows = Vec::new();
    for r in numeric_rows(path, 3)? {
        rows.push((parse(&r[0], path)?, parse(&r[1], path)?, parse(&r[2], path)?));
    }
    LatticeField::from_rows(grid, &rows, FieldKind::Potential)
}

/// (site index, value) rows.
pub fn read_sites(path: &Path, grid: &GridSpec) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.total_sites()];
    for r in numeric_rows(path, 2)? {
        let s: usize = parse(&r[0], path)?;
        if s >= out.len() {
            return Err(KmsError::Shape(format!("{}: site {s} outside the grid", path.display())));
        }
        out[s] = parse(&r[1], path)?;
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| KmsError::Input(e.to_string()))?;
    w.write_record(header).map_err(|e| KmsError::Input(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| KmsError::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// JSON artifact with schema version and a pointer to its manifest.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value).map_err(|e| KmsError::Input(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
        let mp = manifest_path(path);
        let name = mp.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        map.insert("manifest".into(), name.into());
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| KmsError::Input(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: String, config_hash: String, seed: Option<u64>, wall_time_s: f64, outputs: Vec<String>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("bose_kms".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("schema".to_string(), SCHEMA_VERSION.to_string());
        RunManifest { schema_version: SCHEMA_VERSION, command, config_hash, seed, versions, wall_time_s, outputs, notes: Vec::new() }
    }

    pub fn write_next_to(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| KmsError::Input(e.to_string()))?;
        std::fs::write(manifest_path(out), text + "\n")?;
        Ok(())
    }
}
