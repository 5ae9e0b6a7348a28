//! Reconstruction metrics, clustering quality of mapping codes, KNN rotation
//! error and analogy rendering.

mod render;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cir::{nearest_neighbors, sample_partner};
use crate::error::{check_len, GaeError, Result};
use crate::data::PairDataset;
use crate::model::{GaeParams, MappingCode};

pub use render::{grid_dimensions, render_grid, to_gray8, SEPARATOR_PX};

pub const EVAL_SEED: u64 = 0x6576_616c;
pub const DEFAULT_MSCRE_K: usize = 10;
pub const DEFAULT_KNN_K: usize = 5;

const CHUNK: usize = 512;

fn check_dataset(params: &GaeParams, dataset: &PairDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(GaeError::Empty("evaluation dataset has no pairs".into()));
    }
    check_len("evaluation input_dim", params.config().input_dim, dataset.input_dim())
}

fn chunk_f64(dataset: &PairDataset, start: usize, end: usize) -> (Array2<f64>, Array2<f64>) {
    (
        dataset.x.slice(s![start..end, ..]).mapv(f64::from),
        dataset.y.slice(s![start..end, ..]).mapv(f64::from),
    )
}

/// Mapping codes of every pair, inferred from clean inputs.
pub fn mapping_codes(params: &GaeParams, dataset: &PairDataset) -> Result<Array2<f64>> {
    check_dataset(params, dataset)?;
    let n = dataset.len();
    let mut codes = Array2::zeros((n, params.config().num_mappings));
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let (x, y) = chunk_f64(dataset, start, end);
        let c = params.infer_mappings(x.view(), y.view())?;
        codes.slice_mut(s![start..end, ..]).assign(&c);
    }
    Ok(codes)
}

/// Mean symmetric reconstruction error over clean pairs.
pub fn msre(params: &GaeParams, dataset: &PairDataset) -> Result<f64> {
    let codes = mapping_codes(params, dataset)?;
    errors_with_codes(params, dataset, &codes)
}

fn errors_with_codes(params: &GaeParams, dataset: &PairDataset, codes: &Array2<f64>) -> Result<f64> {
    let n = dataset.len();
    let mut total = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let (x, y) = chunk_f64(dataset, start, end);
        let e = params.pair_errors(codes.slice(s![start..end, ..]), x.view(), y.view())?;
        total += e.sum();
    }
    Ok(total / n as f64)
}

/// Mean symmetric cross-reconstruction error with the fixed evaluation seed.
pub fn mscre(params: &GaeParams, dataset: &PairDataset, k: usize) -> Result<f64> {
    mscre_seeded(params, dataset, k, EVAL_SEED)
}

/// Each pair is reconstructed with the code of a partner drawn uniformly
/// from its `k` nearest neighbors in mapping space.
pub fn mscre_seeded(params: &GaeParams, dataset: &PairDataset, k: usize, seed: u64) -> Result<f64> {
    let codes = mapping_codes(params, dataset)?;
    if dataset.len() < k + 1 {
        return Err(GaeError::InsufficientPopulation(format!(
            "MSCRE with k = {k} needs at least {} pairs, got {}",
            k + 1,
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neighbors: Vec<Vec<usize>> = (0..codes.nrows())
        .into_par_iter()
        .map(|i| nearest_neighbors(codes.view(), i, k))
        .collect::<Result<_>>()?;
    let mut partner_codes = Array2::zeros(codes.raw_dim());
    for (i, nn) in neighbors.iter().enumerate() {
        let j = sample_partner(nn, &mut rng)?;
        partner_codes.row_mut(i).assign(&codes.row(j));
    }
    errors_with_codes(params, dataset, &partner_codes)
}

/// Per-class centroids and mean distances to them, classes in ascending
/// label order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub labels: Vec<i16>,
    pub centroids: Array2<f64>,
    pub scatters: Vec<f64>,
}

impl ClusterStats {
    pub fn compute(codes: ArrayView2<f64>, labels: &[i16]) -> Result<Self> {
        check_len("cluster labels", codes.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(GaeError::Empty("no codes to cluster".into()));
        }
        let mut classes: Vec<i16> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let index = |l: i16| classes.binary_search(&l).unwrap();
        let mut centroids = Array2::zeros((classes.len(), codes.ncols()));
        let mut counts = vec![0usize; classes.len()];
        for (row, &l) in codes.rows().into_iter().zip(labels) {
            let c = index(l);
            counts[c] += 1;
            let mut centroid = centroids.row_mut(c);
            centroid += &row;
        }
        for (mut centroid, &n) in centroids.rows_mut().into_iter().zip(&counts) {
            centroid /= n as f64;
        }
        let mut scatters = vec![0.0; classes.len()];
        for (row, &l) in codes.rows().into_iter().zip(labels) {
            let c = index(l);
            scatters[c] += euclidean(row, centroids.row(c));
        }
        for (s, &n) in scatters.iter_mut().zip(&counts) {
            *s /= n as f64;
        }
        Ok(ClusterStats {
            labels: classes,
            centroids,
            scatters,
        })
    }

    pub fn davies_bouldin(&self) -> Result<f64> {
        let c = self.labels.len();
        if c < 2 {
            return Err(GaeError::InsufficientPopulation(format!(
                "Davies-Bouldin index needs at least 2 classes, got {c}"
            )));
        }
        let mut total = 0.0;
        for i in 0..c {
            let mut worst = f64::NEG_INFINITY;
            for j in (0..c).filter(|&j| j != i) {
                let d = euclidean(self.centroids.row(i), self.centroids.row(j));
                if d == 0.0 {
                    return Err(GaeError::Degenerate(format!(
                        "classes {} and {} have coincident centroids",
                        self.labels[i.min(j)],
                        self.labels[i.max(j)]
                    )));
                }
                worst = worst.max((self.scatters[i] + self.scatters[j]) / d);
            }
            total += worst;
        }
        Ok(total / c as f64)
    }
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub fn davies_bouldin(codes: ArrayView2<f64>, labels: &[i16]) -> Result<f64> {
    ClusterStats::compute(codes, labels)?.davies_bouldin()
}

/// Majority vote over the `k` nearest training codes. Vote ties go to the
/// label with the smaller mean distance, then to the smaller angle. Distance
/// ties at the k-th neighbor go to the lower training index.
pub fn knn_classify(
    train_codes: ArrayView2<f64>,
    train_labels: &[i16],
    query_codes: ArrayView2<f64>,
    k: usize,
) -> Result<Vec<i16>> {
    check_len("knn training labels", train_codes.nrows(), train_labels.len())?;
    check_len("knn query width", train_codes.ncols(), query_codes.ncols())?;
    let n = train_codes.nrows();
    if n == 0 {
        return Err(GaeError::Empty("knn training set is empty".into()));
    }
    if k == 0 || k > n {
        return Err(GaeError::InsufficientPopulation(format!(
            "K = {k} neighbors requested from {n} training codes"
        )));
    }
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let out = (0..query_codes.nrows())
        .into_par_iter()
        .map(|qi| {
            let q = query_codes.row(qi);
            let mut dist: Vec<(f64, usize)> = train_codes
                .rows()
                .into_iter()
                .enumerate()
                .map(|(j, row)| (euclidean(row, q), j))
                .collect();
            if k < n {
                dist.select_nth_unstable_by(k - 1, order);
            }
            // fixed summation order keeps mean-distance ties reproducible
            dist[..k].sort_unstable_by(order);
            // (label, votes, summed distance)
            let mut tally: Vec<(i16, usize, f64)> = Vec::new();
            for &(d, j) in &dist[..k] {
                let label = train_labels[j];
                match tally.iter_mut().find(|t| t.0 == label) {
                    Some(t) => {
                        t.1 += 1;
                        t.2 += d;
                    }
                    None => tally.push((label, 1, d)),
                }
            }
            tally
                .into_iter()
                .min_by(|a, b| {
                    b.1.cmp(&a.1)
                        .then_with(|| (a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
                        .then(a.0.cmp(&b.0))
                })
                .unwrap()
                .0
        })
        .collect();
    Ok(out)
}

/// Circular distance between two angles in degrees, in `[0, 180]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 360.0;
    d.min(360.0 - d)
}

/// Mean circular distance between predicted and true angles, in degrees.
pub fn rotation_error(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    check_len("rotation_error truths", predictions.len(), truths.len())?;
    if predictions.is_empty() {
        return Err(GaeError::Empty("no predictions".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(&p, &t)| angular_distance(p, t))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Infers the mapping from `a` to `b` and applies it to `c`.
pub fn make_analogy(
    params: &GaeParams,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    c: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let p = params.config().input_dim;
    check_len("analogy a", p, a.len())?;
    check_len("analogy b", p, b.len())?;
    check_len("analogy c", p, c.len())?;
    let m: MappingCode = params.infer_mapping(a, b)?;
    params.reconstruct_y(&m, c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mscre_k: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mscre_k: DEFAULT_MSCRE_K,
            knn_k: DEFAULT_KNN_K,
            seed: EVAL_SEED,
        }
    }
}

/// One row of results for a (training data, evaluation data) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub gae_data: String,
    pub eval_data: String,
    pub n_pairs: usize,
    pub msre: f64,
    pub mscre: f64,
    pub dbi: f64,
    pub rotation_error_deg: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "gae_data,eval_data,n_pairs,msre,mscre,dbi,rotation_error_deg";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.gae_data,
            self.eval_data,
            self.n_pairs,
            self.msre,
            self.mscre,
            self.dbi,
            self.rotation_error_deg
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("msre", self.msre),
            ("mscre", self.mscre),
            ("dbi", self.dbi),
            ("rotation_error_deg", self.rotation_error_deg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(GaeError::NonFinite(format!("metric {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// All four metrics on `test`. KNN training codes come from `train`, the
/// evaluation data's own training split.
pub fn evaluate(
    params: &GaeParams,
    train: &PairDataset,
    test: &PairDataset,
    gae_data: &str,
    eval_data: &str,
    options: EvalOptions,
) -> Result<MetricsReport> {
    let test_codes = mapping_codes(params, test)?;
    let train_codes = mapping_codes(params, train)?;
    let msre = errors_with_codes(params, test, &test_codes)?;
    let mscre = mscre_seeded(params, test, options.mscre_k, options.seed)?;
    let dbi = davies_bouldin(test_codes.view(), &test.angle_label)?;
    let predicted = knn_classify(
        train_codes.view(),
        &train.angle_label,
        test_codes.view(),
        options.knn_k,
    )?;
    let predicted: Vec<f64> = predicted.into_iter().map(f64::from).collect();
    let truths: Vec<f64> = test.angle_label.iter().copied().map(f64::from).collect();
    let report = MetricsReport {
        gae_data: gae_data.to_string(),
        eval_data: eval_data.to_string(),
        n_pairs: test.len(),
        msre,
        mscre,
        dbi,
        rotation_error_deg: rotation_error(&predicted, &truths)?,
    };
    report.validate()?;
    Ok(report)
}

/// Mean squared difference per element.
pub fn mean_squared_error(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    check_len("mean_squared_error", a.len(), b.len())?;
    if a.is_empty() {
        return Err(GaeError::Empty("no elements".into()));
    }
    Ok(a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64)
}

/// Pearson correlation; zero-variance inputs are an error.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    check_len("pearson", a.len(), b.len())?;
    let ma = a.mean().ok_or_else(|| GaeError::Empty("no elements".into()))?;
    let mb = b.mean().unwrap();
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b.iter()) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(GaeError::Degenerate("correlation of a constant vector".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
