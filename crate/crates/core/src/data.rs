//! Dataset ingestion, exact kNN graphs, random initialization and CSV output
//! of embeddings and iteration traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::solver::{IterationRecord, IterationTrace};
use crate::Embedding;

/// Header line of trace files.
pub const TRACE_HEADER: &str =
    "iter,elapsed_sec,objective,mu,step_norm,backtracks,extrapolation_accepted";

/// Standard deviation of the initial embedding entries (variance `1e-8`).
pub const INIT_STD: f64 = 1e-4;

/// `n x d` matrix of input objects, one per row. Entries are finite, `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least two data points, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidInput(
                "data points have no coordinates".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "data matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.values.select(ndarray::Axis(0), indices))
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// For every point, the indices of its `k` nearest other points in ascending
/// distance order (ties by ascending index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborList {
    k: usize,
    lists: Vec<Vec<usize>>,
}

impl NeighborList {
    pub fn new(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let k = lists.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::InvalidInput("empty neighbor list".into()));
        }
        for (i, list) in lists.iter().enumerate() {
            if list.len() != k {
                return Err(Error::InvalidInput(format!(
                    "point {i} has {} neighbors, expected {k}",
                    list.len()
                )));
            }
            for (pos, &j) in list.iter().enumerate() {
                if j >= n || j == i || list[..pos].contains(&j) {
                    return Err(Error::InvalidInput(format!(
                        "invalid neighbor {j} for point {i}"
                    )));
                }
            }
        }
        Ok(Self { k, lists })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    /// `.tsv` and `.tab` files are tab separated, everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
        {
            Some(ext) if ext == "tsv" || ext == "tab" => TableFormat::Tsv,
            _ => TableFormat::Csv,
        }
    }

    fn delimiter(self) -> u8 {
        match self {
            TableFormat::Csv => b',',
            TableFormat::Tsv => b'\t',
        }
    }
}

/// Reads a rectangular numeric table. A first row made only of non-numeric
/// cells is treated as a header and skipped.
pub fn load_matrix(path: impl AsRef<Path>, format: TableFormat) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(file, format)
}

pub fn parse_matrix(reader: impl std::io::Read, format: TableFormat) -> Result<Array2<f64>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(format.delimiter())
        .from_reader(reader);

    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (index, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Option<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        if index == 0 && parsed.iter().all(Option::is_none) {
            continue;
        }
        let expected = *width.get_or_insert(parsed.len());
        if parsed.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} columns, found {}", parsed.len()),
            });
        }
        for (col, (cell, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Some(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("column {} is not a finite number: {cell:?}", col + 1),
                    })
                }
            }
        }
        rows += 1;
    }
    let width = match width {
        Some(w) if rows > 0 => w,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "no numeric rows".into(),
            })
        }
    };
    Ok(Array2::from_shape_vec((rows, width), values).expect("row lengths checked"))
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact brute-force k-nearest-neighbor lists under Euclidean distance.
pub fn knn_graph(data: &DataMatrix, k: usize) -> Result<NeighborList> {
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 1 <= k < n = {n}, got {k}"
        )));
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut candidates = Vec::with_capacity(n - 1);
    let lists = (0..n)
        .map(|i| {
            candidates.clear();
            let ai = data.row(i);
            candidates.extend(
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (squared_distance(ai, data.row(j)), j)),
            );
            candidates.select_nth_unstable_by(k - 1, order);
            let mut nearest = candidates[..k].to_vec();
            nearest.sort_unstable_by(order);
            nearest.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    NeighborList::new(lists)
}

/// `n x s` matrix with i.i.d. `N(0, 1e-8)` entries from a seeded ChaCha8 stream.
pub fn init_embedding(n: usize, s: usize, seed: u64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal parameters");
    Array2::from_shape_simple_fn((n, s), || normal.sample(&mut rng))
}

/// Gaussian blobs: `clusters` centers drawn from `N(0, spread^2 I)` and unit
/// variance points around them, assigned round-robin.
pub fn synthetic_clusters(
    n: usize,
    d: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<DataMatrix> {
    if clusters == 0 {
        return Err(Error::InvalidParameter("need at least one cluster".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal parameters");
    let centers = Array2::from_shape_simple_fn((clusters, d), || spread * unit.sample(&mut rng));
    let mut values = Array2::zeros((n, d));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let center = centers.row(i % clusters);
        for (v, c) in row.iter_mut().zip(center) {
            *v = c + unit.sample(&mut rng);
        }
    }
    DataMatrix::new(values)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row per point, `s` columns, no header.
pub fn write_embedding(x: &Embedding, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for row in x.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_trace(trace: &IterationTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{TRACE_HEADER}").map_err(io)?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_f64(r.elapsed_sec),
            fmt_f64(r.objective),
            fmt_f64(r.mu),
            fmt_f64(r.step_norm),
            r.backtracks,
            u8::from(r.extrapolation_accepted)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a trace file back. Fields that are not persisted are filled in as
/// `start_objective = NaN`, `reference_step_norm = step_norm`, `segment = 0`.
pub fn read_trace(path: impl AsRef<Path>) -> Result<IterationTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRACE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing trace header".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx as u64 + 1;
        let bad = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != 7 {
            return Err(bad(format!("expected 7 columns, found {}", cells.len())));
        }
        let float = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("column {}: {e}", i + 1)))
        };
        let int = |i: usize| {
            cells[i]
                .parse::<usize>()
                .map_err(|e| bad(format!("column {}: {e}", i + 1)))
        };
        let step_norm = float(4)?;
        records.push(IterationRecord {
            iter: int(0)?,
            elapsed_sec: float(1)?,
            objective: float(2)?,
            mu: float(3)?,
            step_norm,
            backtracks: int(5)?,
            extrapolation_accepted: match cells[6] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(format!("bad flag {other:?}"))),
            },
            start_objective: f64::NAN,
            reference_step_norm: step_norm,
            segment: 0,
        });
    }
    Ok(IterationTrace { records })
}
