//! Plain-text file formats.
//!
//! * Matrix: first line `rows cols`, then `rows` lines of `cols`
//!   space-separated decimals.
//! * Label map: first line `rows cols`, then `rows` lines of integers; `-1`
//!   marks background.
//! * Spectral library: header `L K`, an optional line of `L` wavelengths,
//!   then `K` lines `name v1 … vL`.
//! * Trace: comma-separated `iter,fit,graph_term,sparse_term,total`.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, UnmixError};
use crate::simdata::{GroundTruthMap, SpectralLibrary};
use crate::unmixing::Objective;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> UnmixError {
    UnmixError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| UnmixError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| UnmixError::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_header(path: &Path, line: Option<(usize, &str)>, what: &str) -> Result<(usize, usize, usize)> {
    let (no, text) = line.ok_or_else(|| parse_err(path, 1, format!("missing `{what}` header")))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(parse_err(path, no, format!("expected `{what}` header, found `{text}`")));
    }
    let a = fields[0]
        .parse()
        .map_err(|_| parse_err(path, no, format!("bad count `{}`", fields[0])))?;
    let b = fields[1]
        .parse()
        .map_err(|_| parse_err(path, no, format!("bad count `{}`", fields[1])))?;
    Ok((a, b, no))
}

fn parse_values(path: &Path, no: usize, fields: &[&str], expected: usize, nonnegative: bool) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(parse_err(
            path,
            no,
            format!("expected {expected} values, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.parse().map_err(|_| parse_err(path, no, format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no, format!("non-finite value `{f}`")));
            }
            if nonnegative && v < 0.0 {
                return Err(parse_err(path, no, format!("negative value `{f}`")));
            }
            Ok(v)
        })
        .collect()
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut lines = content_lines(text);
    let (rows, cols, header) = parse_header(path, lines.next(), "rows cols")?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (no, line) in lines {
        if seen == rows {
            return Err(parse_err(path, no, format!("more than {rows} data rows")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        data.extend(parse_values(path, no, &fields, cols, false)?);
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(path, header, format!("expected {rows} data rows, found {seen}")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("row lengths checked"))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_text(path, &format_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    parse_matrix(&read_text(path)?, path)
}

pub fn format_label_map(map: &GroundTruthMap) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", map.rows(), map.cols());
    for r in 0..map.rows() {
        let line: Vec<String> = (0..map.cols())
            .map(|c| map.label(r, c).map_or("-1".to_string(), |k| k.to_string()))
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_label_map(text: &str, path: &Path) -> Result<GroundTruthMap> {
    let mut lines = content_lines(text);
    let (rows, cols, header) = parse_header(path, lines.next(), "rows cols")?;
    let mut labels = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (no, line) in lines {
        if seen == rows {
            return Err(parse_err(path, no, format!("more than {rows} label rows")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cols {
            return Err(parse_err(path, no, format!("expected {cols} labels, found {}", fields.len())));
        }
        for f in fields {
            let v: i64 = f.parse().map_err(|_| parse_err(path, no, format!("bad label `{f}`")))?;
            labels.push(match v {
                -1 => None,
                v if v >= 0 => Some(v as usize),
                _ => return Err(parse_err(path, no, format!("label {v} is neither ≥ 0 nor -1"))),
            });
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(path, header, format!("expected {rows} label rows, found {seen}")));
    }
    GroundTruthMap::from_labels(rows, cols, labels)
}

pub fn read_label_map(path: &Path) -> Result<GroundTruthMap> {
    parse_label_map(&read_text(path)?, path)
}

pub fn format_library(lib: &SpectralLibrary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", lib.band_count(), lib.len());
    if let Some(w) = lib.wavelengths() {
        let line: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    for (name, s) in lib.entries() {
        let line: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{name} {}", line.join(" "));
    }
    out
}

pub fn parse_library(text: &str, path: &Path) -> Result<SpectralLibrary> {
    let lines: Vec<(usize, &str)> = content_lines(text).collect();
    let (bands, count, header) = parse_header(path, lines.first().copied(), "L K")?;
    let body = &lines[1.min(lines.len())..];
    let (wavelengths, spectra) = if body.len() == count + 1 {
        let (no, line) = body[0];
        let fields: Vec<&str> = line.split_whitespace().collect();
        (Some(parse_values(path, no, &fields, bands, false)?), &body[1..])
    } else if body.len() == count {
        (None, body)
    } else {
        return Err(parse_err(
            path,
            header,
            format!("expected {count} spectra (plus optional wavelength line), found {} lines", body.len()),
        ));
    };
    let mut entries = Vec::with_capacity(count);
    for &(no, line) in spectra {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (name, values) = fields
            .split_first()
            .ok_or_else(|| parse_err(path, no, "empty spectrum line"))?;
        entries.push((name.to_string(), parse_values(path, no, values, bands, true)?));
    }
    SpectralLibrary::new(entries, wavelengths)
}

pub fn read_library(path: &Path) -> Result<SpectralLibrary> {
    parse_library(&read_text(path)?, path)
}

pub fn format_trace(trace: &[Objective]) -> String {
    let mut out = String::from("iter,fit,graph_term,sparse_term,total\n");
    for (k, o) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", k + 1, o.fit, o.graph_term, o.sparse_term, o.total);
    }
    out
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<Objective>> {
    let mut out = Vec::new();
    for (no, line) in content_lines(text).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let v = parse_values(path, no, &fields, 5, false)?;
        out.push(Objective {
            fit: v[1],
            graph_term: v[2],
            sparse_term: v[3],
            total: v[4],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    #[test]
    fn matrix_errors_carry_line_numbers() {
        let err = parse_matrix("2 2\n1 2\n3\n", p()).unwrap_err();
        assert!(matches!(err, UnmixError::Parse { line: 3, .. }), "{err}");
        let err = parse_matrix("2 2\n1 2\n3 x\n", p()).unwrap_err();
        assert!(err.to_string().contains("bad number `x`"));
        assert!(parse_matrix("2 2\n1 2\n", p()).is_err());
        assert!(parse_matrix("1 1\nNaN\n", p()).is_err());
        assert!(parse_matrix("", p()).is_err());
    }

    #[test]
    fn label_map_round_trip() {
        let text = "2 3\n0 1 -1\n2 2 0\n";
        let map = parse_label_map(text, p()).unwrap();
        assert_eq!(map.class_count(), 3);
        assert_eq!(map.label(0, 2), None);
        assert_eq!(format_label_map(&map), text);
        assert!(parse_label_map("1 2\n0 -2\n", p()).is_err());
    }

    #[test]
    fn library_with_and_without_wavelengths() {
        let lib = parse_library("3 2\n0.4 0.5 0.6\nsoil 1 2 3\nwater 0 0.5 0.1\n", p()).unwrap();
        assert_eq!(lib.wavelengths(), Some(&[0.4, 0.5, 0.6][..]));
        assert_eq!(lib.entries()[1].0, "water");
        assert_eq!(parse_library(&format_library(&lib), p()).unwrap(), lib);

        let bare = parse_library("2 1\nrock 1 2\n", p()).unwrap();
        assert_eq!(bare.wavelengths(), None);
    }

    #[test]
    fn library_rejects_bad_values() {
        let neg = parse_library("2 1\nrock 1 -2\n", p()).unwrap_err();
        assert!(matches!(neg, UnmixError::Parse { line: 2, .. }));
        let nan = parse_library("2 1\nrock 1 NaN\n", p()).unwrap_err();
        assert!(matches!(nan, UnmixError::Parse { line: 2, .. }));
        let short = parse_library("3 2\nrock 1 2 3\nsand 1 2\n", p()).unwrap_err();
        assert!(matches!(short, UnmixError::Parse { line: 3, .. }));
    }

    #[test]
    fn trace_round_trip() {
        let t = vec![Objective {
            total: 0.5,
            fit: 1.0,
            graph_term: 0.25,
            sparse_term: 0.75,
        }];
        let text = format_trace(&t);
        assert!(text.starts_with("iter,fit,graph_term,sparse_term,total\n1,1,0.25,0.75,0.5"));
        assert_eq!(parse_trace(&text, p()).unwrap(), t);
    }

    #[test]
    fn matrix_format_layout() {
        assert_eq!(format_matrix(&array![[1.0, 0.5], [2.0, 1e-12]]), "2 2\n1 0.5\n2 0.000000000001\n");
    }

    proptest! {
        #[test]
        fn matrix_round_trip_is_lossless(
            rows in 1usize..5, cols in 1usize..5,
            seed in proptest::collection::vec(-1e6f64..1e6, 25)
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 5 + j] / 7.0);
            let back = parse_matrix(&format_matrix(&m), p()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
