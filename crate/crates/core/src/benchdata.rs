//! Synthetic benchmark histograms and histogram CSV files.
//!
//! Every synthetic family has 100 cells with cell 0 fixed at 10000; the
//! 2-D variants reshape the same vector to 10x10 row-major. Files are plain
//! CSV: one histogram row per line, comma-separated nonnegative integers,
//! no header.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Histogram, ModelError};

pub const SYNTHETIC_CELLS: usize = 100;
pub const HEAD_CELL: f64 = 10_000.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown dataset family `{0}`")]
    UnknownFamily(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: line {row}: {message}")]
    MalformedRow { path: PathBuf, row: usize, message: String },
    #[error("{path}: negative count {value} at row {row}, column {col}")]
    NegativeCount {
        path: PathBuf,
        row: usize,
        col: usize,
        value: i64,
    },
    #[error("{path}: file has {actual} cells but shape {shape:?} needs {expected}")]
    ShapeMismatch {
        path: PathBuf,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which histogram to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Level { k: u32 },
    Stair,
    Step { k: u32 },
    SplitStairs,
    Difficult { d: usize, epsilon: f64 },
    File { path: PathBuf, shape: Vec<usize> },
}

impl Family {
    /// Parse a CLI family name; `k` feeds the parameterized families.
    pub fn from_name(name: &str, k: u32) -> Result<Self, DataError> {
        match name.to_ascii_lowercase().as_str() {
            "level" => Ok(Family::Level { k }),
            "stair" => Ok(Family::Stair),
            "step" => Ok(Family::Step { k }),
            "splitstairs" | "split_stairs" | "split-stairs" => Ok(Family::SplitStairs),
            other => Err(DataError::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default = "one")]
    pub dims: u8,
}

fn one() -> u8 {
    1
}

impl DatasetSpec {
    pub fn new(family: Family, dims: u8) -> Self {
        Self { family, dims }
    }

    /// Name in the benchmark tables' style, e.g. `Level00-1d`, `Step16-2d`.
    pub fn label(&self) -> String {
        let base = match &self.family {
            Family::Level { k } => format!("Level{k:02}"),
            Family::Stair => "Stair".into(),
            Family::Step { k } => format!("Step{k}"),
            Family::SplitStairs => "SplitStairs".into(),
            Family::Difficult { d, epsilon } => format!("Difficult-d{d}-eps{epsilon}"),
            Family::File { path, .. } => {
                return path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "file".into())
            }
        };
        format!("{base}-{}d", self.dims)
    }
}

fn synthetic_cells(family: &Family) -> Option<Vec<f64>> {
    let mut cells = vec![0.0; SYNTHETIC_CELLS];
    match family {
        Family::Level { k } => cells[1..].fill(f64::from(*k)),
        Family::Stair => cells.iter_mut().enumerate().for_each(|(i, c)| *c = i as f64),
        Family::Step { k } => cells[50..].fill(f64::from(*k)),
        Family::SplitStairs => cells[..50].iter_mut().enumerate().for_each(|(i, c)| *c = i as f64),
        _ => return None,
    }
    cells[0] = HEAD_CELL;
    Some(cells)
}

/// Build the histogram described by `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Histogram, DataError> {
    if let Family::Difficult { d, epsilon } = spec.family {
        if spec.dims != 1 {
            return Err(DataError::InvalidSpec("the difficult dataset is 1-D".into()));
        }
        return generate_difficult(d, epsilon);
    }
    if let Family::File { path, shape } = &spec.family {
        return load_histogram_file(path, shape);
    }
    let cells = synthetic_cells(&spec.family).expect("synthetic family");
    let shape = match spec.dims {
        1 => vec![SYNTHETIC_CELLS],
        2 => vec![10, 10],
        d => return Err(DataError::InvalidSpec(format!("dims must be 1 or 2, got {d}"))),
    };
    Ok(Histogram::new(cells, shape)?)
}

/// `d` cells, all zero except cell 0 which holds `round(ln(d)/epsilon)`, at least 1.
pub fn generate_difficult(d: usize, epsilon: f64) -> Result<Histogram, DataError> {
    if d < 2 {
        return Err(DataError::InvalidSpec(format!(
            "difficult dataset needs d >= 2, got {d}"
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(DataError::InvalidSpec(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut cells = vec![0.0; d];
    cells[0] = ((d as f64).ln() / epsilon).round().max(1.0);
    Ok(Histogram::one_dim(cells)?)
}

/// Parse histogram CSV text. `path` is only used in error messages.
pub fn parse_histogram(text: &str, shape: &[usize], path: &Path) -> Result<Histogram, DataError> {
    let mut cells = Vec::new();
    let mut width = None;
    for (r, line) in text.lines().enumerate() {
        let row = r + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let before = cells.len();
        for (c, field) in line.split(',').enumerate() {
            let value: i64 = field.trim().parse().map_err(|_| DataError::MalformedRow {
                path: path.to_path_buf(),
                row,
                message: format!("column {}: `{}` is not an integer", c + 1, field.trim()),
            })?;
            if value < 0 {
                return Err(DataError::NegativeCount {
                    path: path.to_path_buf(),
                    row,
                    col: c + 1,
                    value,
                });
            }
            cells.push(value as f64);
        }
        let n = cells.len() - before;
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(DataError::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    message: format!("expected {w} fields, found {n}"),
                })
            }
            _ => {}
        }
    }
    let expected: usize = shape.iter().product();
    if expected != cells.len() || shape.is_empty() {
        return Err(DataError::ShapeMismatch {
            path: path.to_path_buf(),
            shape: shape.to_vec(),
            expected,
            actual: cells.len(),
        });
    }
    Ok(Histogram::new(cells, shape.to_vec())?)
}

pub fn load_histogram_file(path: &Path, shape: &[usize]) -> Result<Histogram, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_histogram(&text, shape, path)
}

/// CSV text for `h`: one line per row of its shape (a single line when 1-D).
/// Cells must be integral.
pub fn format_histogram(h: &Histogram) -> String {
    let width = *h.shape().last().expect("nonempty shape");
    let mut out = String::new();
    for row in h.cells().chunks(width) {
        let line: Vec<String> = row.iter().map(|v| format!("{}", *v as i64)).collect();
        writeln!(out, "{}", line.join(",")).expect("string write");
    }
    out
}

pub fn write_histogram_file(path: &Path, h: &Histogram) -> Result<(), DataError> {
    fs::write(path, format_histogram(h)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(f: Family, dims: u8) -> Histogram {
        generate(&DatasetSpec::new(f, dims)).unwrap()
    }

    #[test]
    fn family_layouts_and_totals() {
        let l0 = gen(Family::Level { k: 0 }, 1);
        assert_eq!(l0.total(), 10_000.0);
        assert!(l0.cells()[1..].iter().all(|&c| c == 0.0));

        let s16 = gen(Family::Step { k: 16 }, 1);
        assert_eq!(s16.total(), 10_800.0);
        assert!(s16.cells()[1..50].iter().all(|&c| c == 0.0));

        let stair = gen(Family::Stair, 1);
        assert_eq!(stair.total(), 14_950.0);
        assert_eq!(&stair.cells()[..4], &[10_000.0, 1.0, 2.0, 3.0]);

        let split = gen(Family::SplitStairs, 1);
        assert_eq!(split.cells()[49], 49.0);
        assert!(split.cells()[50..].iter().all(|&c| c == 0.0));
        assert_eq!(split.total(), 10_000.0 + (1..50).sum::<u32>() as f64);

        let l16 = gen(Family::Level { k: 16 }, 1);
        assert_eq!(l16.total(), 10_000.0 + 99.0 * 16.0);
    }

    #[test]
    fn every_family_has_head_cell() {
        for f in [
            Family::Level { k: 0 },
            Family::Level { k: 32 },
            Family::Stair,
            Family::Step { k: 50 },
            Family::SplitStairs,
        ] {
            for dims in [1, 2] {
                let h = gen(f.clone(), dims);
                assert_eq!(h.len(), 100);
                assert_eq!(h.cells()[0], HEAD_CELL);
            }
        }
    }

    #[test]
    fn two_dim_rows_are_contiguous_blocks() {
        let one = gen(Family::Stair, 1);
        let two = gen(Family::Stair, 2);
        assert_eq!(two.shape(), &[10, 10]);
        for r in 0..10 {
            let block: f64 = one.cells()[r * 10..(r + 1) * 10].iter().sum();
            let row: f64 = (0..10).map(|c| two.cells()[r * 10 + c]).sum();
            assert_eq!(block, row);
        }
    }

    #[test]
    fn difficult_examples() {
        assert_eq!(generate_difficult(100, 1.0).unwrap().cells()[0], 5.0);
        let h = generate_difficult(2, 0.1).unwrap();
        assert_eq!(h.cells(), &[7.0, 0.0]);
        assert_eq!(h.total(), 7.0);
        assert!(generate_difficult(1, 1.0).is_err());
        // tiny log still yields one record
        assert_eq!(generate_difficult(2, 100.0).unwrap().cells()[0], 1.0);
    }

    #[test]
    fn unknown_family_name() {
        assert!(matches!(
            Family::from_name("zigzag", 0),
            Err(DataError::UnknownFamily(_))
        ));
        assert_eq!(Family::from_name("Step", 16).unwrap(), Family::Step { k: 16 });
    }

    #[test]
    fn parse_grid() {
        let text: String = (0..9)
            .map(|r| (0..24).map(|c| (r * 24 + c).to_string()).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        let h = parse_histogram(&text, &[9, 24], Path::new("pums.csv")).unwrap();
        assert_eq!(h.shape(), &[9, 24]);
        assert_eq!(h.cells()[24 * 8 + 23], 215.0);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let p = Path::new("x.csv");
        match parse_histogram("1,2\n3,-4\n", &[2, 2], p) {
            Err(DataError::NegativeCount {
                row: 2,
                col: 2,
                value: -4,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_histogram("1,a\n", &[2], p),
            Err(DataError::MalformedRow { row: 1, .. })
        ));
        assert!(matches!(
            parse_histogram("1,2\n3\n", &[3], p),
            Err(DataError::MalformedRow { row: 2, .. })
        ));
        assert!(matches!(
            parse_histogram("1,2\n3,4\n", &[3, 2], p),
            Err(DataError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let h = gen(Family::Stair, 2);
        write_histogram_file(&path, &h).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 10);
        let back = load_histogram_file(&path, &[10, 10]).unwrap();
        assert_eq!(back, h);
        assert!(matches!(
            load_histogram_file(&dir.path().join("missing.csv"), &[1]),
            Err(DataError::Io { .. })
        ));
    }
}
