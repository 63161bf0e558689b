//! CSV and JSON helpers shared by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MmError, Result};

/// A numeric CSV table with its header.
#[derive(Debug, Clone)]
pub struct Table {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Reads a headed CSV of finite numbers.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MmError::input(format!("cannot open {}: {e}", path.display())))?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(MmError::input(format!("{}: header row is missing or has empty names", path.display())));
    }
    if let Some(dup) = names.iter().enumerate().find_map(|(i, n)| names[..i].contains(n).then_some(n)) {
        return Err(MmError::input(format!("{}: column `{dup}` appears twice", path.display())));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (field, name) in rec.iter().zip(&names) {
            let v: f64 = field.parse().map_err(|_| {
                MmError::input(format!("{} row {} column `{name}`: cannot parse `{field}`", path.display(), r + 1))
            })?;
            if !v.is_finite() {
                return Err(MmError::input(format!(
                    "{} row {} column `{name}`: non-finite value `{field}`",
                    path.display(),
                    r + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(MmError::input(format!("{} has no data rows", path.display())));
    }
    let data = DMatrix::from_row_slice(rows, names.len(), &values);
    Ok(Table { names, data })
}

/// Writes `data` under `names`, numbers in shortest round-trip form.
pub fn write_table(path: &Path, names: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for i in 0..data.nrows() {
        w.serialize(data.row(i).iter().collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

/// How the design's intercept column is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InterceptMode {
    /// Use the first design column as intercept if it is all ones,
    /// otherwise prepend one.
    #[default]
    Auto,
    Add,
    None,
}

/// Design matrix, response and coefficient names from a table.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub intercept: bool,
}

/// Splits `table` into response column `response` and the remaining
/// design columns.
pub fn split_design(table: &Table, response: &str, mode: InterceptMode) -> Result<Design> {
    let j = table
        .column_index(response)
        .ok_or_else(|| MmError::input(format!("response column `{response}` not found; use --response")))?;
    let y = table.data.column(j).into_owned();
    let x = table.data.clone().remove_column(j);
    let mut names: Vec<String> =
        table.names.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, n)| n.clone()).collect();
    let (x, y, intercept) = with_intercept(x, y, &mut names, mode);
    Ok(Design { x, y, names, intercept })
}

/// Design columns only; the response column is dropped when present.
pub fn design_only(table: &Table, response: &str, mode: InterceptMode) -> Design {
    let (x, mut names) = match table.column_index(response) {
        Some(j) => (
            table.data.clone().remove_column(j),
            table.names.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, n)| n.clone()).collect(),
        ),
        None => (table.data.clone(), table.names.clone()),
    };
    let y = DVector::zeros(x.nrows());
    let (x, y, intercept) = with_intercept(x, y, &mut names, mode);
    Design { x, y, names, intercept }
}

fn with_intercept(
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: &mut Vec<String>,
    mode: InterceptMode,
) -> (DMatrix<f64>, DVector<f64>, bool) {
    let has_ones = x.ncols() > 0 && x.column(0).iter().all(|&v| v == 1.0);
    match mode {
        InterceptMode::None => (x, y, false),
        InterceptMode::Auto if has_ones => (x, y, true),
        InterceptMode::Auto | InterceptMode::Add => {
            names.insert(0, "intercept".into());
            (x.insert_column(0, 1.0), y, true)
        }
    }
}

/// Reads a coefficient vector: a one-column CSV, a fit report (its sparse
/// estimate when present, else `coefficients`) or a simulation sidecar
/// (`beta_star`).
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_reader(File::open(path)?)?;
        for key in ["sparse", "coefficients", "beta_star"] {
            if let Some(arr) = v.get(key).and_then(|a| a.as_array()) {
                return arr
                    .iter()
                    .map(|e| {
                        e.as_f64().ok_or_else(|| MmError::input(format!("{}: `{key}` is not numeric", path.display())))
                    })
                    .collect();
            }
        }
        return Err(MmError::input(format!("{}: no coefficient vector found", path.display())));
    }
    let t = read_table(path)?;
    if t.names.len() != 1 {
        return Err(MmError::input(format!("{}: expected one column, found {}", path.display(), t.names.len())));
    }
    Ok(t.data.column(0).iter().copied().collect())
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
    }
    Ok(())
}
