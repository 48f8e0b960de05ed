//! CSV export of deep features and class centers.
//!
//! Embeddings: header `index,label,dim0,...,dim{e-1}`, one row per sample.
//! Centers: header `class,dim0,...`. Reals are written in shortest
//! round-trip decimal form, so parsing recovers the exact `f64`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::checkpoint::Checkpoint;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::trainer::embed;

/// `emb.csv` → `emb.centers.csv`.
pub fn centers_path_for(embeddings: &Path) -> PathBuf {
    let stem = embeddings
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    embeddings.with_file_name(format!("{stem}.centers.csv"))
}

fn header(first: &[&str], dims: usize) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((0..dims).map(|t| format!("dim{t}")))
        .collect()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{other:?}")),
    })
}

pub fn write_embeddings_csv(
    path: &Path,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::shape(
            "features vs labels",
            features.nrows(),
            labels.len(),
        ));
    }
    let mut w = writer(path)?;
    w.write_record(header(&["index", "label"], features.ncols()))?;
    for (i, (row, y)) in features.outer_iter().zip(labels).enumerate() {
        let rec = [i.to_string(), y.to_string()]
            .into_iter()
            .chain(row.iter().map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_centers_csv(path: &Path, centers: ArrayView2<'_, f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header(&["class"], centers.ncols()))?;
    for (j, row) in centers.outer_iter().enumerate() {
        w.write_record(std::iter::once(j.to_string()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Embeds `dataset` with the checkpoint's encoder and writes the embeddings
/// CSV plus the companion centers CSV.
pub fn export_embeddings(
    ck: &Checkpoint,
    dataset: &LabeledDataset,
    path: &Path,
    centers_path: &Path,
) -> Result<()> {
    let (features, _) = embed(&ck.params, dataset.inputs_view())?;
    write_embeddings_csv(path, features.view(), &dataset.labels)?;
    write_centers_csv(centers_path, ck.centers.view())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub labels: Vec<usize>,
    pub coords: Array2<f64>,
}

fn read_table(path: &Path, leading: &[&str]) -> Result<(Vec<usize>, Array2<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{other:?}")),
    })?;
    let head = r.headers()?.clone();
    let names: Vec<&str> = head.iter().collect();
    if names.len() < leading.len() || names[..leading.len()] != *leading {
        return Err(Error::InvalidArgument(format!(
            "{}: expected header starting with {leading:?}, found {names:?}",
            path.display()
        )));
    }
    let dims = names.len() - leading.len();
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |field: &str| {
            Error::InvalidArgument(format!("{}: bad field {field:?}", path.display()))
        };
        let id_field = &rec[leading.len() - 1];
        ids.push(id_field.parse::<usize>().map_err(|_| parse_err(id_field))?);
        for f in rec.iter().skip(leading.len()) {
            flat.push(f.parse::<f64>().map_err(|_| parse_err(f))?);
        }
    }
    let coords = Array2::from_shape_vec((ids.len(), dims), flat)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((ids, coords))
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingTable> {
    let (labels, coords) = read_table(path, &["index", "label"])?;
    Ok(EmbeddingTable { labels, coords })
}

/// Returns the center coordinates, row `j` for class `j`.
pub fn read_centers_csv(path: &Path) -> Result<Array2<f64>> {
    let (classes, coords) = read_table(path, &["class"])?;
    if classes.iter().enumerate().any(|(j, &c)| j != c) {
        return Err(Error::InvalidArgument(format!(
            "{}: classes must be listed as 0..k",
            path.display()
        )));
    }
    Ok(coords)
}
