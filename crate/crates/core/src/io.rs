//! Density files: comma-separated text and 8-bit binary PGM (P5).
//!
//! Both formats store one grid row per line or raster row, starting with row `j = 0`
//! (smallest y). Values are read as raw densities and normalized into a [`DiscreteMeasure`].
//! CSV output uses the shortest round-trip representation of every weight, so a written frame
//! reloads bit for bit. PGM output rescales weights so the largest maps to 255.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{measure_from_density_grid, DiscreteMeasure, Grid2};

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        message: message.into(),
    }
}

/// Reads a rectangular CSV of nonnegative reals. Returns the grid and the raw values.
pub fn read_csv_density(path: &Path) -> Result<(Grid2, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;
    let mut width = None;
    let mut height = 0;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(path, e.to_string()))?;
        let row: Vec<f64> = record
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(path, format!("row {height}: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.is_empty() {
            continue;
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    format!("row {height} has {} values, expected {w}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| parse_err(path, "empty file"))?;
    Ok((Grid2::new(width, height)?, values))
}

/// Reads an 8-bit binary PGM (P5).
pub fn read_pgm_density(path: &Path) -> Result<(Grid2, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(parse_err(path, format!("magic {} is not P5", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| parse_err(path, format!("header field {s}: {e}")))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(path, format!("maxval {maxval} is not 8-bit")));
    }
    let raster = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| parse_err(path, "raster shorter than header size"))?;
    let values = raster.iter().map(|&b| b as f64).collect();
    Ok((Grid2::new(width, height)?, values))
}

/// Reads a density file, choosing the format from the extension (`.pgm` or CSV otherwise).
pub fn load_density(path: &Path) -> Result<DiscreteMeasure> {
    let (grid, raw) = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => read_pgm_density(path)?,
        _ => read_csv_density(path)?,
    };
    measure_from_density_grid(grid, &raw)
}

/// Writes the weights as CSV, one grid row per line, at full precision.
pub fn write_csv(mu: &DiscreteMeasure, path: &Path) -> Result<()> {
    let grid = mu.grid();
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in mu.weights().chunks(grid.width()) {
        let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the weights as an 8-bit binary PGM scaled so the maximum weight maps to 255.
pub fn write_pgm(mu: &DiscreteMeasure, path: &Path) -> Result<()> {
    let grid = mu.grid();
    let max = mu.weights().iter().cloned().fold(0.0, f64::max);
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", grid.width(), grid.height())?;
    let bytes: Vec<u8> = mu
        .weights()
        .iter()
        .map(|w| (w / max * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}
