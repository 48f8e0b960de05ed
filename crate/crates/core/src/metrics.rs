//! Accuracy, intra-class compactness and inter-class spread of an embedding.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sq_dist;

pub const SPREAD_EPS: f64 = 1e-12;

fn check_rows(context: &'static str, rows: usize, labels: &[usize]) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::shape(context, rows, labels.len()));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn accuracy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_rows("accuracy logits vs labels", logits.nrows(), labels)?;
    let hits = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(*row) == y)
        .count();
    Ok(fraction(hits, labels.len()))
}

/// Mean distance (not squared) from each sample to its own class center.
pub fn intra_compactness(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    centers: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_rows("features vs labels", features.nrows(), labels)?;
    if features.ncols() != centers.ncols() {
        return Err(Error::shape(
            "features vs centers",
            features.dim(),
            centers.dim(),
        ));
    }
    if let Some((index, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l >= centers.nrows())
    {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            k: centers.nrows(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = features
        .outer_iter()
        .zip(labels)
        .map(|(x, &y)| sq_dist(x, centers.row(y)).sqrt())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Average distance from each center to the centroid of all centers.
pub fn inter_spread(centers: ArrayView2<'_, f64>) -> f64 {
    let Some(centroid) = centers.mean_axis(Axis(0)) else {
        return 0.0;
    };
    let total: f64 = centers
        .outer_iter()
        .map(|c| sq_dist(c, centroid.view()).sqrt())
        .sum();
    total / centers.nrows() as f64
}

pub fn nearest_center_accuracy(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    centers: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_rows("features vs labels", features.nrows(), labels)?;
    if features.ncols() != centers.ncols() {
        return Err(Error::shape(
            "features vs centers",
            features.dim(),
            centers.dim(),
        ));
    }
    let hits = features
        .outer_iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.outer_iter().enumerate() {
                let d = sq_dist(*x, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best == y
        })
        .count();
    Ok(fraction(hits, labels.len()))
}

/// Per-class feature means for classes that occur in `labels`, with the class
/// ids they belong to.
pub fn class_means(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    k: usize,
) -> Result<(Vec<usize>, Array2<f64>)> {
    check_rows("features vs labels", features.nrows(), labels)?;
    let d = features.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (x, &y) in features.outer_iter().zip(labels) {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                index: 0,
                label: y,
                k,
            });
        }
        let mut row = sums.row_mut(y);
        row += &x;
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&j| counts[j] > 0).collect();
    let mut means = Array2::zeros((present.len(), d));
    for (row, &j) in present.iter().enumerate() {
        means
            .row_mut(row)
            .assign(&(&sums.row(j) / counts[j] as f64));
    }
    Ok((present, means))
}

/// Compactness/spread statistics measured against one set of centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub intra_compactness: f64,
    pub inter_spread: f64,
    pub spread_ratio: f64,
}

impl SpreadStats {
    fn new(intra_compactness: f64, inter_spread: f64) -> Self {
        Self {
            intra_compactness,
            inter_spread,
            spread_ratio: inter_spread / intra_compactness.max(SPREAD_EPS),
        }
    }
}

/// Evaluation summary of an embedding.
///
/// The top-level compactness/spread fields use the learned center bank. The
/// `empirical` block recomputes them with per-class means of the evaluated
/// features in place of the bank, which is the only variant meaningful for a
/// softmax-only run whose bank never trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub accuracy: f64,
    pub nearest_center_accuracy: f64,
    pub intra_compactness: f64,
    pub inter_spread: f64,
    pub spread_ratio: f64,
    pub empirical: SpreadStats,
}

impl EmbeddingReport {
    pub fn compute(
        features: ArrayView2<'_, f64>,
        logits: ArrayView2<'_, f64>,
        labels: &[usize],
        centers: ArrayView2<'_, f64>,
    ) -> Result<Self> {
        let bank = SpreadStats::new(
            intra_compactness(features, labels, centers)?,
            inter_spread(centers),
        );
        let (present, means) = class_means(features, labels, centers.nrows())?;
        let mut slot = vec![usize::MAX; centers.nrows()];
        for (row, &j) in present.iter().enumerate() {
            slot[j] = row;
        }
        let remapped: Vec<usize> = labels.iter().map(|&y| slot[y]).collect();
        let empirical = if present.is_empty() {
            SpreadStats::new(0.0, 0.0)
        } else {
            SpreadStats::new(
                intra_compactness(features, &remapped, means.view())?,
                inter_spread(means.view()),
            )
        };
        Ok(Self {
            accuracy: accuracy(logits, labels)?,
            nearest_center_accuracy: nearest_center_accuracy(features, labels, centers)?,
            intra_compactness: bank.intra_compactness,
            inter_spread: bank.inter_spread,
            spread_ratio: bank.spread_ratio,
            empirical,
        })
    }
}
