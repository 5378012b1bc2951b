//! Plain-text file formats: headerless CSV matrices and ASCII graymaps.
//!
//! Writes go through a temporary file in the target directory followed by a
//! rename, so readers never observe a half-written artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{AccaError, Result};
use crate::linalg::Matrix;

fn io_err(path: &Path, source: std::io::Error) -> AccaError {
    AccaError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io_err(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Row-major CSV, one row per line, `\n` line endings, no header.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            // Debug formatting is the shortest representation that round-trips
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str, origin: &Path) -> Result<Matrix> {
    let parse_err = |msg: String| AccaError::Parse {
        path: origin.to_path_buf(),
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("line {}: invalid number {tok:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err("file contains no rows".into()));
    }
    let cols = rows[0].len();
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, matrix_to_csv(m).as_bytes())
}

/// ASCII PGM (`P2`), 8-bit; larger entries render darker:
/// `value = round(255 * (1 - p))`, with `p` clamped to `[0, 1]`.
pub fn matrix_to_pgm(m: &Matrix) -> String {
    let mut out = format!("P2\n{} {}\n255\n", m.ncols(), m.nrows());
    for row in m.row_iter() {
        let line: Vec<String> = row
            .iter()
            .map(|&p| ((255.0 * (1.0 - p.clamp(0.0, 1.0))).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pgm(path: &Path, m: &Matrix) -> Result<()> {
    atomic_write(path, matrix_to_pgm(m).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_layout() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.25, 0.75, 2.0]);
        assert_eq!(matrix_to_pgm(&m), "P2\n3 2\n255\n0 255 128\n191 64 0\n");
    }

    #[test]
    fn csv_rejects_ragged_and_garbage() {
        let p = Path::new("mem");
        assert!(parse_matrix_csv("1,2\n3\n", p).is_err());
        assert!(parse_matrix_csv("1,abc\n", p).is_err());
        assert!(parse_matrix_csv("1,NaN\n", p).is_err());
        assert!(parse_matrix_csv("\n\n", p).is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("acca-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        write_matrix_csv(&path, &Matrix::identity(2, 2)).unwrap();
        write_matrix_csv(&path, &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0.0\n");
        assert!(!dir.join(".m.csv.tmp").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn csv_round_trips(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut state = seed;
            let m = Matrix::from_fn(rows, cols, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e3
            });
            let back = parse_matrix_csv(&matrix_to_csv(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
