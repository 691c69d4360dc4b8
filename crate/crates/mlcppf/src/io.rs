//! File formats: dataset CSVs, experiment result CSV/JSON, and the binary
//! model checkpoint.
//!
//! Dataset directory layout:
//!
//! - `areas.csv` — `id,lat,lon,known` with `known` in {0, 1}
//! - `flows_<period>_<day>.csv` — n x n matrix; header row and first
//!   column carry area ids, rows are origins, columns destinations;
//!   `<period>` is one of `morning`, `afternoon`, `nonrush` and `<day>`
//!   counts from 1
//! - `view_<name>.csv` — first column the area id, remaining columns
//!   numeric features
//!
//! Checkpoint layout (`*.mlc`): the 8-byte magic `MLCPPFv1`, a u64
//! little-endian header length, a JSON header, then row-major f64
//! little-endian payloads for C, W, H followed by the loss history. The
//! header records the matrix size, fitted side, solver config, stop
//! reason, iteration count, and loss-history length.

use crate::core::{AreaCatalog, FlowTensor, Period, SolverConfig, ViewSet};
use crate::error::{Error, Result};
use crate::eval::{Dataset, EvalResult, SweepCell};
use crate::solver::{FitReport, StopReason};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const CHECKPOINT_MAGIC: &[u8; 8] = b"MLCPPFv1";

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed { path: path.display().to_string(), reason: reason.into() }
}

// ---------------------------------------------------------------------------
// Dataset CSVs
// ---------------------------------------------------------------------------

pub fn write_catalog(path: &Path, catalog: &AreaCatalog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "lat", "lon", "known"])?;
    for i in 0..catalog.n() {
        let (lat, lon) = catalog.coords()[i];
        w.write_record([
            catalog.ids()[i].as_str(),
            &format!("{lat}"),
            &format!("{lon}"),
            if catalog.known()[i] { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_catalog(path: &Path) -> Result<AreaCatalog> {
    let mut r = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut known = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 4 {
            return Err(malformed(path, format!("expected 4 columns, got {}", record.len())));
        }
        ids.push(record[0].to_string());
        let lat: f64 =
            record[1].parse().map_err(|e| malformed(path, format!("bad latitude: {e}")))?;
        let lon: f64 =
            record[2].parse().map_err(|e| malformed(path, format!("bad longitude: {e}")))?;
        coords.push((lat, lon));
        known.push(match &record[3] {
            "1" => true,
            "0" => false,
            other => return Err(malformed(path, format!("known must be 0 or 1, got {other:?}"))),
        });
    }
    if ids.is_empty() {
        return Err(malformed(path, "no areas"));
    }
    Ok(AreaCatalog::new(ids, coords, known))
}

pub fn flow_file_name(period: Period, day: usize) -> String {
    format!("flows_{}_{}.csv", period.token(), day)
}

pub fn write_flow_matrix(path: &Path, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["origin".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut row = vec![ids[i].clone()];
        for j in 0..m.ncols() {
            row.push(format!("{}", m[(i, j)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flow_matrix(path: &Path, ids: &[String]) -> Result<DMatrix<f64>> {
    let n = ids.len();
    let mut r = csv::Reader::from_path(path)?;
    {
        let headers = r.headers()?;
        if headers.len() != n + 1 {
            return Err(malformed(path, format!("expected {} columns, got {}", n + 1, headers.len())));
        }
        for (j, id) in ids.iter().enumerate() {
            if &headers[j + 1] != id.as_str() {
                return Err(malformed(
                    path,
                    format!("destination column {} is {:?}, expected {:?}", j + 1, &headers[j + 1], id),
                ));
            }
        }
    }
    let mut m = DMatrix::zeros(n, n);
    let mut row_idx = 0;
    for record in r.records() {
        let record = record?;
        if row_idx >= n {
            return Err(malformed(path, "too many rows"));
        }
        if &record[0] != ids[row_idx].as_str() {
            return Err(malformed(
                path,
                format!("origin row {} is {:?}, expected {:?}", row_idx, &record[0], ids[row_idx]),
            ));
        }
        for j in 0..n {
            m[(row_idx, j)] = record[j + 1]
                .parse()
                .map_err(|e| malformed(path, format!("bad flow value at row {row_idx}: {e}")))?;
        }
        row_idx += 1;
    }
    if row_idx != n {
        return Err(malformed(path, format!("expected {n} rows, got {row_idx}")));
    }
    Ok(m)
}

pub fn write_view(path: &Path, ids: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..x.ncols()).map(|j| format!("f{j:03}")));
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut row = vec![ids[i].clone()];
        for j in 0..x.ncols() {
            row.push(format!("{}", x[(i, j)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_view(path: &Path, ids: &[String]) -> Result<DMatrix<f64>> {
    let n = ids.len();
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len().saturating_sub(1);
    if cols == 0 {
        return Err(malformed(path, "view has no feature columns"));
    }
    let mut x = DMatrix::zeros(n, cols);
    let mut row_idx = 0;
    for record in r.records() {
        let record = record?;
        if row_idx >= n {
            return Err(malformed(path, "too many rows"));
        }
        if &record[0] != ids[row_idx].as_str() {
            return Err(malformed(
                path,
                format!("row {} id is {:?}, expected {:?}", row_idx, &record[0], ids[row_idx]),
            ));
        }
        for j in 0..cols {
            x[(row_idx, j)] = record[j + 1]
                .parse()
                .map_err(|e| malformed(path, format!("bad feature at row {row_idx}: {e}")))?;
        }
        row_idx += 1;
    }
    if row_idx != n {
        return Err(malformed(path, format!("expected {n} rows, got {row_idx}")));
    }
    Ok(x)
}

/// Write the complete dataset into `dir` using the documented layout.
pub fn write_dataset(
    dir: &Path,
    catalog: &AreaCatalog,
    flows: &[FlowTensor],
    views: &ViewSet,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_catalog(&dir.join("areas.csv"), catalog)?;
    for tensor in flows {
        for (d, m) in tensor.matrices.iter().enumerate() {
            write_flow_matrix(&dir.join(flow_file_name(tensor.period, d + 1)), catalog.ids(), m)?;
        }
    }
    for (name, x) in views.names.iter().zip(&views.views) {
        write_view(&dir.join(format!("view_{name}.csv")), catalog.ids(), x)?;
    }
    Ok(())
}

/// Read a dataset directory: catalog, all flow tensors found (days must
/// be contiguous from 1), and all views sorted by name.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let catalog = read_catalog(&dir.join("areas.csv"))?;
    let mut flows = Vec::new();
    for period in Period::ALL {
        let mut matrices = Vec::new();
        for day in 1.. {
            let path = dir.join(flow_file_name(period, day));
            if !path.exists() {
                break;
            }
            matrices.push(read_flow_matrix(&path, catalog.ids())?);
        }
        if !matrices.is_empty() {
            flows.push(FlowTensor::new(period, matrices));
        }
    }
    if flows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no flow files found under {}",
            dir.display()
        )));
    }

    let mut view_files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|f| f.to_str())
                .map(|f| f.starts_with("view_") && f.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    view_files.sort();
    let mut names = Vec::new();
    let mut views = Vec::new();
    for path in view_files {
        let stem = path.file_stem().unwrap().to_string_lossy();
        names.push(stem.trim_start_matches("view_").to_string());
        views.push(read_view(&path, catalog.ids())?);
    }

    Ok(Dataset { catalog, flows, views: ViewSet::new(names, views) })
}

// ---------------------------------------------------------------------------
// Prediction and result files
// ---------------------------------------------------------------------------

/// Write a prediction matrix with the same header/row-id layout as flow
/// files.
pub fn write_prediction(path: &Path, ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    write_flow_matrix(path, ids, m)
}

/// Per-repetition rows: `method,period,ratio,seed,mae,nrmse`.
pub fn write_results_csv(path: &Path, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "period", "ratio", "seed", "mae", "nrmse"])?;
    for res in results {
        for rep in &res.reps {
            w.write_record([
                res.method.token(),
                res.period.token(),
                &format!("{}", res.ratio),
                &format!("{}", rep.seed),
                &format!("{}", rep.mae),
                &format!("{}", rep.nrmse),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aggregate means as JSON.
pub fn write_summary_json(path: &Path, results: &[EvalResult]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        period: &'a str,
        ratio: f64,
        repetitions: usize,
        mae: f64,
        nrmse: f64,
    }
    let rows: Vec<Row> = results
        .iter()
        .map(|r| Row {
            method: r.method.token(),
            period: r.period.token(),
            ratio: r.ratio,
            repetitions: r.reps.len(),
            mae: r.mae,
            nrmse: r.nrmse,
        })
        .collect();
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &rows)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Plot-ready sweep rows: `k,lambda,mae,nrmse`.
pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "lambda", "mae", "nrmse"])?;
    for c in cells {
        w.write_record([
            &format!("{}", c.k),
            &format!("{}", c.lambda),
            &format!("{}", c.mae),
            &format!("{}", c.nrmse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Model checkpoints
// ---------------------------------------------------------------------------

/// Which fitting pass a checkpoint stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSide {
    Departure,
    Arrival,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    n: usize,
    side: ModelSide,
    config: SolverConfig,
    iterations: usize,
    stop_reason: StopReason,
    loss_history_len: usize,
}

/// A fitted model loaded from or destined for disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub side: ModelSide,
    pub config: SolverConfig,
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub loss_history: Vec<f64>,
}

fn write_matrix_le(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_matrix_le(r: &mut impl Read, n: usize) -> Result<DMatrix<f64>> {
    let mut buf = [0u8; 8];
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            r.read_exact(&mut buf)?;
            m[(i, j)] = f64::from_le_bytes(buf);
        }
    }
    Ok(m)
}

pub fn save_checkpoint(
    path: &Path,
    side: ModelSide,
    config: &SolverConfig,
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    report: &FitReport,
) -> Result<()> {
    let header = CheckpointHeader {
        n: c.nrows(),
        side,
        config: config.clone(),
        iterations: report.iterations,
        stop_reason: report.stop_reason,
        loss_history_len: report.loss_history.len(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    write_matrix_le(&mut out, c)?;
    write_matrix_le(&mut out, w)?;
    write_matrix_le(&mut out, h)?;
    for &v in &report.loss_history {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(malformed(path, "bad magic; not a model checkpoint"));
    }
    let mut len_buf = [0u8; 8];
    input.read_exact(&mut len_buf)?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if header_len > 1 << 20 {
        return Err(malformed(path, "unreasonable header length"));
    }
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let c = read_matrix_le(&mut input, header.n)?;
    let w = read_matrix_le(&mut input, header.n)?;
    let h = read_matrix_le(&mut input, header.n)?;
    let mut loss_history = Vec::with_capacity(header.loss_history_len);
    let mut buf = [0u8; 8];
    for _ in 0..header.loss_history_len {
        input.read_exact(&mut buf)?;
        loss_history.push(f64::from_le_bytes(buf));
    }
    Ok(Checkpoint {
        side: header.side,
        config: header.config,
        c,
        w,
        h,
        iterations: header.iterations,
        stop_reason: header.stop_reason,
        loss_history,
    })
}
