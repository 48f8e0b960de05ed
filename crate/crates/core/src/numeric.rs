//! Dense kernels and the seeded randomness contract shared by the rest of the
//! crate. Everything here is `f64`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `m × d` matrix of deep features, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch(Array2<f64>);

impl FeatureBatch {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (m, d) = data.dim();
        if m == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature batch must be non-empty, got {m}x{d}"
            )));
        }
        check_finite(data.view(), "feature batch")?;
        Ok(Self(data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(data)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

impl AsRef<Array2<f64>> for FeatureBatch {
    fn as_ref(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Class labels for a batch, each validated against the class count `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Vec<usize>,
    k: usize,
}

impl LabelBatch {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange { index, label, k });
        }
        Ok(Self { labels, k })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }
}

/// Seed for every random stream in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

/// Independent purposes get independent ChaCha streams off the same seed, so
/// adding draws for one purpose never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    EncoderInit = 0,
    CenterInit = 1,
    Batching = 2,
    SyntheticMeans = 3,
    SyntheticTrain = 4,
    SyntheticTest = 5,
    Scratch = 6,
}

impl RngSeed {
    pub fn rng(self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream as u64);
        rng
    }
}

pub(crate) fn check_finite(m: ArrayView2<'_, f64>, context: &'static str) -> Result<()> {
    match m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((row, col), _)) => Err(Error::NonFinite { context, row, col }),
        None => Ok(()),
    }
}

/// Squared Euclidean distance between every feature row and every center row.
///
/// Computed as an explicit difference-and-square so entries are exactly zero
/// for coincident points and never negative.
pub fn pairwise_sq_dist(
    features: ArrayView2<'_, f64>,
    centers: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if features.ncols() != centers.ncols() {
        return Err(Error::shape(
            "pairwise_sq_dist (features vs centers)",
            features.dim(),
            centers.dim(),
        ));
    }
    let mut out = Array2::zeros((features.nrows(), centers.nrows()));
    for (x, mut out_row) in features.outer_iter().zip(out.outer_iter_mut()) {
        for (c, o) in centers.outer_iter().zip(out_row.iter_mut()) {
            *o = sq_dist(x, c);
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| {
            let t = p - q;
            t * t
        })
        .sum()
}

/// `max(v) + ln Σ exp(v - max(v))`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(
            "log_sum_exp of an empty vector".into(),
        ));
    }
    Ok(log_sum_exp_unchecked(v.iter().copied()))
}

pub(crate) fn log_sum_exp_unchecked(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    max + v.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn naive_dist(x: &Array2<f64>, c: &Array2<f64>) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; c.nrows()]; x.nrows()];
        for i in 0..x.nrows() {
            for j in 0..c.nrows() {
                let mut s = 0.0;
                for t in 0..x.ncols() {
                    s += (x[[i, t]] - c[[j, t]]).powi(2);
                }
                out[i][j] = s;
            }
        }
        out
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let d = pairwise_sq_dist(array![[0.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(d, array![[0.0]]);
    }

    #[test]
    fn hand_evaluated_distances() {
        let x = array![[1.0, 0.0]];
        let c = array![[0.0, 0.0], [2.0, 0.0]];
        let d = pairwise_sq_dist(x.view(), c.view()).unwrap();
        assert_eq!(d, array![[1.0, 1.0]]);
        let oracle = naive_dist(&x, &c);
        assert_eq!(d.row(0).to_vec(), oracle[0]);
    }

    #[test]
    fn translated_identical_points() {
        let x = array![[3.0]] + 5.0;
        let c = array![[3.0]] + 5.0;
        assert_eq!(pairwise_sq_dist(x.view(), c.view()).unwrap(), array![[0.0]]);
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let err = pairwise_sq_dist(array![[1.0, 2.0]].view(), array![[1.0]].view()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(1, 2)") && msg.contains("(1, 1)"), "{msg}");
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        // ln(e^2 + 1) evaluated at 40 digits.
        let v = log_sum_exp(&[2.0, 0.0]).unwrap();
        assert!((v - 2.126_928_011_042_972_5).abs() < 1e-15);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn label_batch_rejects_out_of_range() {
        match LabelBatch::new(vec![0, 3, 12], 10) {
            Err(Error::LabelOutOfRange { index, label, k }) => {
                assert_eq!((index, label, k), (2, 12, 10))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_batch_rejects_non_finite() {
        assert!(FeatureBatch::new(array![[1.0, f64::NAN]]).is_err());
        assert!(FeatureBatch::new(Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let seed = RngSeed(7);
        let a: Vec<u64> = (0..4)
            .map(|_| seed.rng(Stream::Batching).random())
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| seed.rng(Stream::Batching).random())
            .collect();
        assert_eq!(a, b);
        let c: u64 = seed.rng(Stream::CenterInit).random();
        assert_ne!(a[0], c);
    }

    #[test]
    fn matches_scalar_loop_on_random_instances() {
        let mut rng = RngSeed(11).rng(Stream::Scratch);
        for _ in 0..50 {
            let m = rng.random_range(1..=32);
            let k = rng.random_range(1..=10);
            let d = rng.random_range(1..=16);
            let x = Array2::from_shape_fn((m, d), |_| rng.random_range(-5.0..5.0));
            let c = Array2::from_shape_fn((k, d), |_| rng.random_range(-5.0..5.0));
            let got = pairwise_sq_dist(x.view(), c.view()).unwrap();
            let want = naive_dist(&x, &c);
            for i in 0..m {
                for j in 0..k {
                    let w = want[i][j];
                    assert!((got[[i, j]] - w).abs() <= 1e-12 * w.abs().max(f64::MIN_POSITIVE));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn translation_invariance(
            xs in proptest::collection::vec(-10.0f64..10.0, 6),
            cs in proptest::collection::vec(-10.0f64..10.0, 4),
            shift in proptest::collection::vec(-100.0f64..100.0, 2),
        ) {
            let x = Array2::from_shape_vec((3, 2), xs).unwrap();
            let c = Array2::from_shape_vec((2, 2), cs).unwrap();
            let s = ndarray::Array1::from(shift);
            let base = pairwise_sq_dist(x.view(), c.view()).unwrap();
            let moved = pairwise_sq_dist((&x + &s).view(), (&c + &s).view()).unwrap();
            for (a, b) in base.iter().zip(moved.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn log_sum_exp_shift(v in proptest::collection::vec(-50.0f64..50.0, 1..12), s in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + s).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + s;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
