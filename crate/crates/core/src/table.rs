//! Plain-text tables: the parameter CSV and numeric matrix CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::plant::{N_CONTROLS, PARAM_NAMES};

/// Formats one row per note. With `header`, the first line carries the
/// control names of the leading columns.
pub fn format_params_csv(rows: &[Vec<f64>], header: bool) -> Result<String> {
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || width > N_CONTROLS || rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape(format!(
            "parameter rows must share a width in 1..={N_CONTROLS}"
        )));
    }
    let mut s = String::new();
    if header {
        s.push_str(&PARAM_NAMES[..width].join(","));
        s.push('\n');
    }
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_params_csv(path: impl AsRef<Path>, rows: &[Vec<f64>], header: bool) -> Result<()> {
    std::fs::write(path, format_params_csv(rows, header)?)?;
    Ok(())
}

/// Reads a parameter CSV with or without a header row.
pub fn read_params_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let rows = parse_matrix(path, &text, true)?;
    if rows.is_empty() {
        return Err(Error::parse(path, "no parameter rows"));
    }
    let width = rows[0].len();
    if width > N_CONTROLS || rows.iter().any(|r| r.len() != width) {
        return Err(Error::parse(path, "ragged or over-wide parameter rows"));
    }
    Ok(rows)
}

/// Parses comma-separated numbers, one row per non-empty line. Lines
/// starting with `#` are comments. When `allow_header` is set, a first
/// content line that fails to parse is skipped.
pub fn parse_matrix(path: &Path, text: &str, allow_header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at_first = std::mem::replace(&mut first, false);
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if at_first && allow_header => continue,
            Err(e) => return Err(Error::parse(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(rows)
}

/// Row-major matrix to CSV, one line per row.
pub fn format_matrix(rows: usize, cols: usize, data: &[f64]) -> String {
    let mut s = String::with_capacity(rows * cols * 8);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", data[r * cols + c]);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_uses_control_names() {
        let s = format_params_csv(&[vec![0.5, 0.25]], true).unwrap();
        assert_eq!(s, "MIDI note (Pitch),MIDI duration\n0.5,0.25\n");
    }

    #[test]
    fn read_accepts_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]];
        for header in [true, false] {
            let p = dir.path().join(format!("p{header}.csv"));
            write_params_csv(&p, &rows, header).unwrap();
            assert_eq!(read_params_csv(&p).unwrap(), rows);
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(format_params_csv(&[vec![0.1], vec![0.1, 0.2]], false).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "0.1,0.2\n0.3\n").unwrap();
        assert!(read_params_csv(&p).is_err());
        std::fs::write(&p, "a,b\nc,d\n").unwrap();
        assert!(read_params_csv(&p).is_err());
    }
}
