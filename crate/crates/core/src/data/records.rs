use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiles::MAX_LATITUDE;

pub const REQUIRED_COLUMNS: [&str; 4] = ["id", "lat", "lon", "price"];
pub const IMAGE_PATH_COLUMN: &str = "image_path";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// USD, strictly positive.
    pub price: f64,
    pub numeric: BTreeMap<String, f64>,
    pub categorical: BTreeMap<String, String>,
    pub image_path: Option<PathBuf>,
}

impl PropertyRecord {
    /// Explicit `image_path` if the row had one, else `{image_dir}/{id}.png`.
    pub fn image_file(&self, image_dir: &Path) -> PathBuf {
        match &self.image_path {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => image_dir.join(p),
            None => image_dir.join(format!("{}.png", self.id)),
        }
    }
}

/// Which CSV columns feed the models.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumns {
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub records: Vec<PropertyRecord>,
    pub rejects: Vec<Reject>,
}

pub fn load_tabular_csv(path: &Path, columns: &FeatureColumns) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let report = read_tabular_csv(file, columns)?;
    if !report.rejects.is_empty() {
        log::warn!(
            "{}: rejected {} of {} rows",
            path.display(),
            report.rejects.len(),
            report.rejects.len() + report.records.len()
        );
    }
    Ok(report)
}

pub fn read_tabular_csv<R: std::io::Read>(reader: R, columns: &FeatureColumns) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut missing = Vec::new();
    let mut find = |name: &str| {
        let p = position(name);
        if p.is_none() {
            missing.push(name.to_owned());
        }
        p.unwrap_or(usize::MAX)
    };
    let id_col = find("id");
    let lat_col = find("lat");
    let lon_col = find("lon");
    let price_col = find("price");
    let numeric_cols: Vec<(String, usize)> = columns
        .numeric
        .iter()
        .map(|n| (n.clone(), find(n)))
        .collect();
    let categorical_cols: Vec<(String, usize)> = columns
        .categorical
        .iter()
        .map(|n| (n.clone(), find(n)))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required column(s): {}",
            missing.join(", ")
        )));
    }
    let image_col = position(IMAGE_PATH_COLUMN);

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let line = row_idx as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(Reject {
                    line,
                    id: None,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let id = row.get(id_col).map(|s| s.trim().to_owned());
        let mut reject = |reason: String| {
            rejects.push(Reject {
                line,
                id: id.clone(),
                reason,
            })
        };
        let parsed = (|| -> std::result::Result<PropertyRecord, String> {
            let cell = |i: usize, name: &str| {
                row.get(i)
                    .map(str::trim)
                    .ok_or_else(|| format!("missing value in column {name}"))
            };
            let number = |i: usize, name: &str| -> std::result::Result<f64, String> {
                let raw = cell(i, name)?;
                let v: f64 = raw
                    .parse()
                    .map_err(|_| format!("unparsable number in column {name}: {raw:?}"))?;
                if !v.is_finite() {
                    return Err(format!("non-finite value in column {name}"));
                }
                Ok(v)
            };
            let id = cell(id_col, "id")?.to_owned();
            if id.is_empty() {
                return Err("empty id".into());
            }
            let lat = number(lat_col, "lat")?;
            let lon = number(lon_col, "lon")?;
            let price = number(price_col, "price")?;
            if price <= 0.0 {
                return Err("nonpositive price".into());
            }
            if !(-MAX_LATITUDE..=MAX_LATITUDE).contains(&lat) {
                return Err("latitude out of range".into());
            }
            if !(-180.0..180.0).contains(&lon) {
                return Err("longitude out of range".into());
            }
            let mut numeric = BTreeMap::new();
            for (name, i) in &numeric_cols {
                numeric.insert(name.clone(), number(*i, name)?);
            }
            let mut categorical = BTreeMap::new();
            for (name, i) in &categorical_cols {
                categorical.insert(name.clone(), cell(*i, name)?.to_owned());
            }
            let image_path = image_col
                .and_then(|i| row.get(i))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(PathBuf::from);
            Ok(PropertyRecord {
                id,
                lat,
                lon,
                price,
                numeric,
                categorical,
                image_path,
            })
        })();
        match parsed {
            Ok(rec) if !seen.insert(rec.id.clone()) => reject("duplicate id".into()),
            Ok(rec) => records.push(rec),
            Err(reason) => reject(reason),
        }
    }
    Ok(LoadReport { records, rejects })
}

/// Writes records in the ingest layout: `id,lat,lon,price`, then the given
/// feature columns, then `image_path` when any record has one.
pub fn write_tabular_csv<W: std::io::Write>(
    writer: W,
    records: &[PropertyRecord],
    columns: &FeatureColumns,
) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
    let with_images = records.iter().any(|r| r.image_path.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.extend(columns.numeric.iter().map(String::as_str));
    header.extend(columns.categorical.iter().map(String::as_str));
    if with_images {
        header.push(IMAGE_PATH_COLUMN);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.id.clone(),
            r.lat.to_string(),
            r.lon.to_string(),
            r.price.to_string(),
        ];
        for name in &columns.numeric {
            row.push(r.numeric.get(name).map(f64::to_string).unwrap_or_default());
        }
        for name in &columns.categorical {
            row.push(r.categorical.get(name).cloned().unwrap_or_default());
        }
        if with_images {
            row.push(
                r.image_path
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(format!("csv flush: {e}")))
}
