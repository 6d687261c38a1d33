//! CSV datasets and JSON documents.
//!
//! Dataset CSVs have a header row and `,` delimiters. One column, named by
//! the caller, is the target; every other column is a numeric feature. An
//! empty cell or the token `NA` marks a missing feature (stored as 0).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use missfit_core::{Matrix, MaskedDataset};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Feature columns of a CSV, with an optional target.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub x: Matrix,
    pub mask: Vec<u8>,
    pub target: Option<Vec<f64>>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

/// Reads a CSV. When `target` is given the column must exist and be fully
/// observed.
pub fn read_table(path: &Path, target: Option<&str>) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::csv(path, "missing header row"));
    }
    let target_col = match target {
        Some(t) => Some(
            header
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| Error::csv(path, format!("no target column `{t}` in header")))?,
        ),
        None => None,
    };
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = r + 2;
        if record.len() != header.len() {
            return Err(Error::csv(
                path,
                format!("line {line}: expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(c) == target_col {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::csv(path, format!("line {line}: target `{}` is not a finite number", header[c])))?;
                y.push(v);
            } else if is_missing(cell) {
                values.push(0.0);
                mask.push(1);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::csv(path, format!("line {line}: column `{}`: cannot parse `{cell}`", header[c]))
                })?;
                if !v.is_finite() {
                    return Err(Error::csv(path, format!("line {line}: column `{}`: non-finite value", header[c])));
                }
                values.push(v);
                mask.push(0);
            }
        }
    }
    let n = mask.len() / d.max(1);
    let x = Matrix::from_vec(n, d, values)?;
    Ok(Table {
        names,
        x,
        mask,
        target: target_col.map(|_| y),
    })
}

/// Reads a dataset with the named target column.
pub fn read_dataset(path: &Path, target: &str) -> Result<MaskedDataset> {
    let t = read_table(path, Some(target))?;
    let y = t.target.expect("target requested");
    let ds = MaskedDataset::new(t.x, t.mask, y)?.with_feature_names(t.names)?;
    ds.validate()?;
    Ok(ds)
}

/// Reads a dataset whose target is optional; rows get `y = 0` when absent.
pub fn read_features(path: &Path, target: Option<&str>) -> Result<(MaskedDataset, bool)> {
    let t = read_table(path, target)?;
    let has_target = t.target.is_some();
    let n = t.x.rows();
    let y = t.target.unwrap_or_else(|| vec![0.0; n]);
    let ds = MaskedDataset::new(t.x, t.mask, y)?.with_feature_names(t.names)?;
    Ok((ds, has_target))
}

/// Full-precision, locale-free number formatting used in every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes features then the target column; missing cells are left empty.
pub fn write_dataset(path: &Path, ds: &MaskedDataset, target: &str) -> Result<()> {
    let names: Vec<String> = match ds.feature_names() {
        Some(n) => n.to_vec(),
        None => (1..=ds.d()).map(|j| format!("x{j}")).collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = names;
    header.push(target.to_string());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = (0..ds.d())
            .map(|j| if ds.is_missing(i, j) { String::new() } else { fmt_f64(ds.x()[(i, j)]) })
            .collect();
        row.push(fmt_f64(ds.y()[i]));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes one column of numbers under `name`.
pub fn write_column(path: &Path, name: &str, values: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::with_capacity(values.len() * 20 + name.len() + 1);
    body.push_str(name);
    body.push('\n');
    for v in values {
        body.push_str(&fmt_f64(*v));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        at: ".".into(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses JSON; errors name the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Json {
        path: path.into(),
        at: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_tokens_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,y,b\n1.5,2,NA\n,3,4\n0.25,-1,\n").unwrap();
        let ds = read_dataset(&p, "y").unwrap();
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.mask(), &[0, 1, 1, 0, 0, 1]);
        assert_eq!(ds.x().as_slice(), &[1.5, 0.0, 0.0, 4.0, 0.25, 0.0]);
        assert_eq!(ds.y(), &[2.0, 3.0, -1.0]);

        let q = dir.path().join("e.csv");
        write_dataset(&q, &ds, "y").unwrap();
        assert_eq!(std::fs::read_to_string(&q).unwrap(), "a,b,y\n1.5,,2\n,4,3\n0.25,,-1\n");
        assert_eq!(read_dataset(&q, "y").unwrap(), ds);
    }

    #[test]
    fn bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,y\n1,\n").unwrap();
        assert!(read_dataset(&p, "y").is_err());
        std::fs::write(&p, "a,y\nfoo,1\n").unwrap();
        let err = read_dataset(&p, "y").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`a`"), "{err}");
        assert!(read_dataset(&p, "z").is_err());
        assert!(matches!(read_dataset(&dir.path().join("nope.csv"), "y"), Err(Error::Io { .. })));
    }

    #[test]
    fn json_errors_carry_a_path() {
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Inner {
            p: f64,
        }
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Outer {
            inner: Vec<Inner>,
        }
        let err = parse_json::<Outer>(Path::new("c.json"), r#"{"inner":[{"p":1},{"p":"x"}]}"#).unwrap_err();
        assert!(err.to_string().contains("inner[1].p"), "{err}");
    }
}
