//! File formats: dataset and graph JSON, trace CSVs, and summary documents.
//!
//! Every float is written with 17 significant digits so that reading a file
//! back reproduces the exact `f64`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::Formatter;
use serde_json::{json, Value};

use crate::distributed::{CommGraph, DgdRecord, GraphKind};
use crate::error::{Error, Result};
use crate::problem::{Dataset, DatasetKind};
use crate::solvers::IterRecord;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// JSON formatter writing floats as `{:.16e}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SigDigits;

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serializes `value` as JSON with 17-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Writes `contents` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json_string(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn dataset_to_json(ds: &Dataset) -> Value {
    let rows: Vec<Vec<f64>> = (0..ds.n()).map(|i| ds.row(i).to_vec()).collect();
    let mut v = json!({
        "n": ds.n(),
        "d": ds.d(),
        "normalized": ds.normalized(),
        "seed": ds.seed(),
        "kind": ds.kind().name(),
        "X": rows,
        "y": ds.y().as_slice(),
        "w_star": ds.w_star().as_slice(),
    });
    if let DatasetKind::Spiked { rho } = ds.kind() {
        v["rho"] = json!(rho);
    }
    v
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
struct DatasetDoc {
    n: usize,
    d: usize,
    #[serde(default)]
    seed: Option<u64>,
    kind: String,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    w_star: Vec<f64>,
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    let doc: DatasetDoc = serde_json::from_str(text)?;
    let kind = match doc.kind.as_str() {
        "orthonormal" => DatasetKind::Orthonormal,
        "gaussian" => DatasetKind::Gaussian,
        "spiked" => DatasetKind::Spiked {
            rho: doc
                .rho
                .ok_or_else(|| Error::Parse("spiked dataset without rho".into()))?,
        },
        "custom" => DatasetKind::Custom,
        other => return Err(Error::Parse(format!("unknown dataset kind `{other}`"))),
    };
    if doc.x.len() != doc.n || doc.x.iter().any(|r| r.len() != doc.d) {
        return Err(Error::DimensionMismatch(format!(
            "X does not have shape {}x{}",
            doc.n, doc.d
        )));
    }
    let flat: Vec<f64> = doc.x.into_iter().flatten().collect();
    Dataset::from_stored(
        kind,
        doc.seed,
        DMatrix::from_row_slice(doc.n, doc.d, &flat),
        DVector::from_vec(doc.y),
        DVector::from_vec(doc.w_star),
    )
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_json(path, &dataset_to_json(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_json(&text)
}

fn graph_params(kind: GraphKind) -> Value {
    match kind {
        GraphKind::Grid { rows, cols } => json!({ "rows": rows, "cols": cols }),
        GraphKind::KRing { k } => json!({ "k": k }),
        GraphKind::ErdosRenyi { p } => json!({ "p": p }),
        _ => json!({}),
    }
}

pub fn graph_to_json(g: &CommGraph) -> Value {
    let edges: Vec<[usize; 2]> = g.edges().iter().map(|&(a, b)| [a, b]).collect();
    json!({
        "n": g.n(),
        "kind": g.kind().name(),
        "params": graph_params(g.kind()),
        "seed": g.seed(),
        "edges": edges,
    })
}

#[derive(Deserialize)]
struct GraphDoc {
    n: usize,
    kind: String,
    #[serde(default)]
    params: Value,
    #[serde(default)]
    seed: u64,
    edges: Vec<[usize; 2]>,
}

pub fn parse_graph_kind(kind: &str, params: &Value) -> Result<GraphKind> {
    let usize_param = |key: &str| -> Result<usize> {
        params
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Parse(format!("graph kind `{kind}` needs integer `{key}`")))
    };
    Ok(match kind {
        "complete" => GraphKind::Complete,
        "ring" => GraphKind::Ring,
        "path" => GraphKind::Path,
        "grid" => GraphKind::Grid {
            rows: usize_param("rows")?,
            cols: usize_param("cols")?,
        },
        "k_ring" => GraphKind::KRing { k: usize_param("k")? },
        "erdos_renyi" => GraphKind::ErdosRenyi {
            p: params
                .get("p")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Parse("erdos_renyi needs `p`".into()))?,
        },
        other => return Err(Error::Parse(format!("unknown graph kind `{other}`"))),
    })
}

pub fn graph_from_json(text: &str) -> Result<CommGraph> {
    let doc: GraphDoc = serde_json::from_str(text)?;
    let kind = parse_graph_kind(&doc.kind, &doc.params)?;
    let edges: Vec<(usize, usize)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
    CommGraph::from_edges(doc.n, &edges, kind, doc.seed)
}

pub const TRACE_HEADER: &str = "t,err_sq_range,loss,batch_size";
pub const DGD_HEADER: &str = "t,mean_err_sq_range,edge_spread,global_spread,penalized_loss";

pub fn trace_csv(records: &[IterRecord]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.t,
            fmt_f64(r.err_sq_range),
            fmt_f64(r.loss),
            r.batch_size
        ));
    }
    s
}

/// Ensemble mean curve in the per-run trace layout; `loss` and `batch_size`
/// columns hold the run means.
pub fn mean_csv(mean_err: &[f64], mean_loss: &[f64], mean_batch: &[f64]) -> String {
    let mut s = String::from("t,err_sq_range,loss,batch_size\n");
    for t in 0..mean_err.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            t,
            fmt_f64(mean_err[t]),
            fmt_f64(mean_loss[t]),
            fmt_f64(mean_batch[t])
        ));
    }
    s
}

pub fn dgd_csv(records: &[DgdRecord]) -> String {
    let mut s = String::from(DGD_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.t,
            fmt_f64(r.mean_err_sq_range),
            fmt_f64(r.edge_spread),
            fmt_f64(r.global_spread),
            fmt_f64(r.penalized_loss)
        ));
    }
    s
}

/// Reads one numeric column of a CSV written by this module.
pub fn read_csv_column(text: &str, column: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
    let idx = header
        .split(',')
        .position(|h| h == column)
        .ok_or_else(|| Error::Parse(format!("column `{column}` not in header `{header}`")))?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cell = l
                .split(',')
                .nth(idx)
                .ok_or_else(|| Error::Parse(format!("short row `{l}`")))?;
            cell.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number `{cell}`: {e}")))
        })
        .collect()
}
