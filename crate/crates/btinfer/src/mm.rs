//! Matrix Market exchange format for dense matrices.
//!
//! Reads `array` and `coordinate` files with `real` (or `integer`) entries
//! and `general` or `symmetric` symmetry; duplicate coordinate entries are
//! summed per the format convention. Writes `array real general` at full
//! double precision.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Array,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_error(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

/// Reads a dense matrix from a Matrix Market file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (header_no, header) = match lines.next() {
        Some((i, Ok(line))) => (i, line),
        Some((i, Err(e))) => return Err(parse_error(path, i + 1, e.to_string())),
        None => return Err(parse_error(path, 1, "empty file")),
    };
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_lowercase()).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_error(
            path,
            header_no + 1,
            "expected header `%%MatrixMarket matrix <layout> <field> <symmetry>`",
        ));
    }
    let layout = match fields[2].as_str() {
        "array" => Layout::Array,
        "coordinate" => Layout::Coordinate,
        other => return Err(parse_error(path, header_no + 1, format!("unsupported layout `{other}`"))),
    };
    if fields[3] != "real" && fields[3] != "integer" {
        return Err(parse_error(
            path,
            header_no + 1,
            format!("unsupported field `{}` (real entries required)", fields[3]),
        ));
    }
    let symmetry = match fields[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => {
            return Err(parse_error(
                path,
                header_no + 1,
                format!("unsupported symmetry `{other}`"),
            ))
        }
    };

    // Skip comments and blanks up to the size line.
    let (size_no, size_line) = loop {
        match lines.next() {
            Some((i, Ok(line))) => {
                let t = line.trim();
                if t.is_empty() || t.starts_with('%') {
                    continue;
                }
                break (i, line);
            }
            Some((i, Err(e))) => return Err(parse_error(path, i + 1, e.to_string())),
            None => return Err(parse_error(path, header_no + 1, "missing size line")),
        }
    };
    let size_fields: Vec<&str> = size_line.split_whitespace().collect();

    match layout {
        Layout::Array => {
            if size_fields.len() != 2 {
                return Err(parse_error(path, size_no + 1, "array size line must be `rows cols`"));
            }
            let rows: usize = size_fields[0]
                .parse()
                .map_err(|_| parse_error(path, size_no + 1, "bad row count"))?;
            let cols: usize = size_fields[1]
                .parse()
                .map_err(|_| parse_error(path, size_no + 1, "bad column count"))?;
            if symmetry == Symmetry::Symmetric && rows != cols {
                return Err(parse_error(path, size_no + 1, "symmetric matrix must be square"));
            }
            let expected = match symmetry {
                Symmetry::General => rows * cols,
                Symmetry::Symmetric => cols * (cols + 1) / 2,
            };
            let mut values = Vec::with_capacity(expected);
            for (i, line) in &mut lines {
                let t = line.map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                let t = t.trim();
                if t.is_empty() || t.starts_with('%') {
                    continue;
                }
                for tok in t.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| parse_error(path, i + 1, format!("bad value `{tok}`")))?;
                    values.push(v);
                }
            }
            if values.len() != expected {
                return Err(parse_error(
                    path,
                    size_no + 1,
                    format!("expected {expected} entries, found {}", values.len()),
                ));
            }
            let mut m = DMatrix::zeros(rows, cols);
            let mut idx = 0;
            match symmetry {
                Symmetry::General => {
                    // Column-major per the format.
                    for j in 0..cols {
                        for i in 0..rows {
                            m[(i, j)] = values[idx];
                            idx += 1;
                        }
                    }
                }
                Symmetry::Symmetric => {
                    // Lower triangle, column-major; mirror above.
                    for j in 0..cols {
                        for i in j..rows {
                            m[(i, j)] = values[idx];
                            m[(j, i)] = values[idx];
                            idx += 1;
                        }
                    }
                }
            }
            Ok(m)
        }
        Layout::Coordinate => {
            if size_fields.len() != 3 {
                return Err(parse_error(
                    path,
                    size_no + 1,
                    "coordinate size line must be `rows cols nnz`",
                ));
            }
            let rows: usize = size_fields[0]
                .parse()
                .map_err(|_| parse_error(path, size_no + 1, "bad row count"))?;
            let cols: usize = size_fields[1]
                .parse()
                .map_err(|_| parse_error(path, size_no + 1, "bad column count"))?;
            let nnz: usize = size_fields[2]
                .parse()
                .map_err(|_| parse_error(path, size_no + 1, "bad entry count"))?;
            let mut m = DMatrix::zeros(rows, cols);
            let mut seen = 0usize;
            for (i, line) in &mut lines {
                let t = line.map_err(|e| parse_error(path, i + 1, e.to_string()))?;
                let t = t.trim();
                if t.is_empty() || t.starts_with('%') {
                    continue;
                }
                let parts: Vec<&str> = t.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(parse_error(path, i + 1, "coordinate entry must be `i j value`"));
                }
                let r: usize = parts[0]
                    .parse()
                    .map_err(|_| parse_error(path, i + 1, "bad row index"))?;
                let c: usize = parts[1]
                    .parse()
                    .map_err(|_| parse_error(path, i + 1, "bad column index"))?;
                let v: f64 = parts[2]
                    .parse()
                    .map_err(|_| parse_error(path, i + 1, format!("bad value `{}`", parts[2])))?;
                if r == 0 || c == 0 || r > rows || c > cols {
                    return Err(parse_error(
                        path,
                        i + 1,
                        format!("index ({r}, {c}) outside {rows}x{cols}"),
                    ));
                }
                // Duplicates are summed.
                m[(r - 1, c - 1)] += v;
                if symmetry == Symmetry::Symmetric && r != c {
                    m[(c - 1, r - 1)] += v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_error(
                    path,
                    size_no + 1,
                    format!("expected {nnz} entries, found {seen}"),
                ));
            }
            Ok(m)
        }
    }
}

/// Writes a dense matrix as `array real general`, column-major, at full
/// double precision (17 significant digits).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::with_capacity(32 + 25 * m.len());
    out.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let _ = writeln!(out, "{:.16e}", m[(i, j)]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{random_matrix, seeded_rng};

    #[test]
    fn array_round_trip_is_bit_identical() {
        let m = random_matrix(7, 4, &mut seeded_rng(500));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn symmetric_array_expands() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mtx");
        // Lower triangle of [[1, 2], [2, 5]] column-major: 1, 2, 5.
        std::fs::write(
            &path,
            "%%MatrixMarket matrix array real symmetric\n% comment\n2 2\n1.0\n2.0\n5.0\n",
        )
        .unwrap();
        let m = read_matrix(&path).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
    }

    #[test]
    fn coordinate_duplicates_are_summed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mtx");
        std::fs::write(
            &path,
            "%%MatrixMarket matrix coordinate real general\n3 3 4\n1 1 1.5\n1 1 0.5\n2 3 -1.0\n3 1 2.0\n",
        )
        .unwrap();
        let m = read_matrix(&path).unwrap();
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(1, 2)], -1.0);
        assert_eq!(m[(2, 0)], 2.0);
    }

    #[test]
    fn coordinate_symmetric_mirrors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cs.mtx");
        std::fs::write(
            &path,
            "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 3.0\n2 1 -1.0\n",
        )
        .unwrap();
        let m = read_matrix(&path).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 0.0]));
    }

    #[test]
    fn reports_line_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mtx");
        std::fs::write(
            &path,
            "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 oops 1.0\n",
        )
        .unwrap();
        match read_matrix(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "%%MatrixMarket matrix coordinate complex general\n1 1 1\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}
