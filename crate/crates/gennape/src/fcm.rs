//! Feature reduction (standardize, PCA) and Fuzzy C-Means clustering.
//!
//! Clustering alternates membership and centroid updates until the maximum
//! membership change drops below 1e-9 or 10,000 iterations elapse. For
//! unseen families, memberships are inferred from the stored centroids.

use crate::linalg::{sym_eigen, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const FCM_EPSILON: f64 = 1e-9;
pub const FCM_MAX_ITERS: usize = 10_000;
pub const PCA_TARGET_DIMS: usize = 32;

#[derive(Debug, Error)]
pub enum FcmError {
    #[error("EmptyInput: no feature vectors")]
    EmptyInput,
    #[error("InvalidFuzzifier: m must be > 1, got {0}")]
    InvalidFuzzifier(f64),
    #[error("need at least C={0} samples, got {1}")]
    TooFewSamples(usize, usize),
    #[error("model not fitted: {0}")]
    NotFitted(String),
    #[error("grid search: every cell failed")]
    AllCellsFailed,
}

/// Standardization + PCA of embeddings, with standardized FLOPs appended
/// after the projection. Fitted once on the training family and reused
/// verbatim for every test family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReducer {
    pub emb_mean: Vec<f64>,
    pub emb_std: Vec<f64>,
    /// Embedding dimensions dropped for having ~zero variance.
    pub dropped_dims: Vec<usize>,
    /// Orthonormal PCA basis, kept-dims x components.
    pub basis: Matrix,
    pub flops_mean: f64,
    pub flops_std: f64,
}

impl FeatureReducer {
    pub fn feature_len(&self) -> usize {
        self.basis.cols + 1
    }

    pub fn transform_one(&self, embedding: &[f64], flops_g: f64) -> Vec<f64> {
        let kept: Vec<f64> = embedding
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.dropped_dims.contains(i))
            .map(|(i, &v)| (v - self.emb_mean[i]) / self.emb_std[i])
            .collect();
        debug_assert_eq!(kept.len(), self.basis.rows);
        let mut out = Vec::with_capacity(self.basis.cols + 1);
        for c in 0..self.basis.cols {
            let mut acc = 0.0;
            for (r, &k) in kept.iter().enumerate() {
                acc += k * self.basis.get(r, c);
            }
            out.push(acc);
        }
        let fs = if self.flops_std > 1e-12 { self.flops_std } else { 1.0 };
        out.push((flops_g - self.flops_mean) / fs);
        out
    }

    pub fn transform(&self, embeddings: &[Vec<f64>], flops: &[f64]) -> Vec<Vec<f64>> {
        embeddings
            .iter()
            .zip(flops)
            .map(|(e, &f)| self.transform_one(e, f))
            .collect()
    }
}

/// Fit standardization stats and PCA basis on the training family and
/// return the reduced features. Dimensions with std < 1e-12 are dropped
/// and reported in `dropped_dims`.
pub fn fit_reducer(
    embeddings: &[Vec<f64>],
    flops: &[f64],
    target_dims: usize,
) -> Result<(FeatureReducer, Vec<Vec<f64>>), FcmError> {
    if embeddings.is_empty() || embeddings.len() != flops.len() {
        return Err(FcmError::EmptyInput);
    }
    let n = embeddings.len();
    let d = embeddings[0].len();
    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, &v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut std = vec![0.0; d];
    for e in embeddings {
        for j in 0..d {
            std[j] += (e[j] - mean[j]).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n as f64).sqrt();
    }
    let dropped_dims: Vec<usize> = (0..d).filter(|&j| std[j] < 1e-12).collect();
    let kept: Vec<usize> = (0..d).filter(|j| !dropped_dims.contains(j)).collect();
    let dk = kept.len();
    if dk == 0 {
        return Err(FcmError::NotFitted("all embedding dimensions degenerate".into()));
    }

    // standardized data matrix over kept dims
    let mut xs = Matrix::zeros(n, dk);
    for (i, e) in embeddings.iter().enumerate() {
        for (c, &j) in kept.iter().enumerate() {
            xs.set(i, c, (e[j] - mean[j]) / std[j]);
        }
    }
    // covariance and its eigendecomposition
    let mut cov = Matrix::zeros(dk, dk);
    for i in 0..n {
        for a in 0..dk {
            let xa = xs.get(i, a);
            for b in a..dk {
                let v = cov.get(a, b) + xa * xs.get(i, b);
                cov.set(a, b, v);
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for a in 0..dk {
        for b in a..dk {
            let v = cov.get(a, b) / denom;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    let eig = sym_eigen(&cov).map_err(|e| FcmError::NotFitted(e.to_string()))?;
    // components by descending eigenvalue, skip near-zero
    let mut comps: Vec<usize> = (0..dk).rev().filter(|&c| eig.values[c] > 1e-12).collect();
    comps.truncate(target_dims.min(dk));
    let mut basis = Matrix::zeros(dk, comps.len());
    for (c_new, &c_old) in comps.iter().enumerate() {
        // sign convention: largest-magnitude entry positive
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for r in 0..dk {
            let v = eig.vectors.get(r, c_old);
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        for r in 0..dk {
            basis.set(r, c_new, sign * eig.vectors.get(r, c_old));
        }
    }

    let flops_mean = flops.iter().sum::<f64>() / n as f64;
    let flops_std = (flops.iter().map(|f| (f - flops_mean).powi(2)).sum::<f64>() / n as f64).sqrt();

    let reducer = FeatureReducer {
        emb_mean: mean,
        emb_std: std,
        dropped_dims,
        basis,
        flops_mean,
        flops_std,
    };
    let features = reducer.transform(embeddings, flops);
    Ok((reducer, features))
}

/// Fitted Fuzzy C-Means model: C centroids and the fuzzification
/// coefficient m.
#[derive(Debug, Clone, PartialEq)]
pub struct FcmModel {
    pub centroids: Vec<Vec<f64>>,
    pub m: f64,
}

impl FcmModel {
    pub fn c(&self) -> usize {
        self.centroids.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Membership row for one point: U_k = (sum_j (d_k^2 / d_j^2)^(1/(m-1)))^-1.
/// A point coinciding with a centroid gets hard membership there.
pub fn fcm_membership(x: &[f64], model: &FcmModel) -> Vec<f64> {
    membership_from_distances(
        &model.centroids.iter().map(|v| sq_dist(x, v)).collect::<Vec<_>>(),
        model.m,
    )
}

fn membership_from_distances(d2: &[f64], m: f64) -> Vec<f64> {
    let c = d2.len();
    if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
        let mut u = vec![0.0; c];
        u[hit] = 1.0;
        return u;
    }
    let exp = 1.0 / (m - 1.0);
    let mut u = vec![0.0; c];
    for k in 0..c {
        let mut s = 0.0;
        for j in 0..c {
            s += (d2[k] / d2[j]).powf(exp);
        }
        u[k] = 1.0 / s;
    }
    u
}

/// FCM objective: sum_{i,k} U_{i,k}^m d_{i,k}^2.
pub fn fcm_objective(features: &[Vec<f64>], u: &[Vec<f64>], model: &FcmModel) -> f64 {
    let mut obj = 0.0;
    for (x, row) in features.iter().zip(u) {
        for (k, v) in model.centroids.iter().enumerate() {
            obj += row[k].powf(model.m) * sq_dist(x, v);
        }
    }
    obj
}

pub struct FcmFit {
    pub model: FcmModel,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
}

/// Fit FCM by alternating membership and centroid updates
/// until max |U(t+1)-U(t)| <= 1e-9 or 10,000 iterations. Centroids are
/// initialized by seeded D^2 sampling over the data points.
pub fn fcm_fit(features: &[Vec<f64>], c: usize, m: f64, seed: u64) -> Result<FcmFit, FcmError> {
    if features.is_empty() {
        return Err(FcmError::EmptyInput);
    }
    if m <= 1.0 {
        return Err(FcmError::InvalidFuzzifier(m));
    }
    if c == 0 || features.len() < c {
        return Err(FcmError::TooFewSamples(c, features.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = dsq_init(features, c, &mut rng);
    let mut model = FcmModel { centroids, m };

    let mut u: Vec<Vec<f64>> = features.iter().map(|x| fcm_membership(x, &model)).collect();
    let mut trace = vec![fcm_objective(features, &u, &model)];
    let mut iterations = 0;
    while iterations < FCM_MAX_ITERS {
        iterations += 1;
        model.centroids = update_centroids(features, &u, m, &model.centroids);
        let u_new: Vec<Vec<f64>> = features.iter().map(|x| fcm_membership(x, &model)).collect();
        let obj = fcm_objective(features, &u_new, &model);
        let prev = *trace.last().unwrap();
        assert!(
            obj <= prev + 1e-10,
            "FCM objective increased: {prev} -> {obj} at iteration {iterations}"
        );
        trace.push(obj);
        let max_delta = u
            .iter()
            .zip(&u_new)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        u = u_new;
        if max_delta <= FCM_EPSILON {
            break;
        }
    }
    Ok(FcmFit { model, iterations, objective_trace: trace })
}

fn update_centroids(
    features: &[Vec<f64>],
    u: &[Vec<f64>],
    m: f64,
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let c = old.len();
    let d = features[0].len();
    let mut centroids = vec![vec![0.0; d]; c];
    for k in 0..c {
        let mut wsum = 0.0;
        for (x, row) in features.iter().zip(u) {
            let w = row[k].powf(m);
            wsum += w;
            for j in 0..d {
                centroids[k][j] += w * x[j];
            }
        }
        if wsum > 0.0 {
            for j in 0..d {
                centroids[k][j] /= wsum;
            }
        } else {
            centroids[k] = old[k].clone();
        }
    }
    centroids
}

// k-means++-style seeding: first centroid uniform, then proportional to
// squared distance from the nearest chosen centroid.
fn dsq_init(features: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen: Vec<usize> = vec![rng.gen_range(0..n)];
    while chosen.len() < c {
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chosen
                    .iter()
                    .map(|&j| sq_dist(&features[i], &features[j]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            // all remaining points coincide with chosen centroids
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        } else {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        };
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| features[i].clone()).collect()
}

/// Hyperparameter grid: C in [10, 20], m in {2.0, 2.5, 3.0, 3.5, 4.0}.
pub fn default_grid() -> Vec<(usize, f64)> {
    let mut cells = Vec::new();
    for c in 10..=20 {
        for step in 0..5 {
            cells.push((c, 2.0 + 0.5 * step as f64));
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub c: usize,
    pub m: f64,
    pub srcc: Option<f64>,
}

pub struct GridSearchResult {
    pub c: usize,
    pub m: f64,
    pub model: FcmModel,
    pub cells: Vec<GridCell>,
}

/// Exhaustive grid search. For each (C, m) cell the FCM model is fitted on
/// the training features, the provided trainer builds the downstream head
/// ensemble, and the cell is scored by validation SRCC. Ties break toward
/// smaller C, then smaller m. A failing cell is skipped, not fatal.
pub fn grid_search<F>(
    train_features: &[Vec<f64>],
    seed: u64,
    mut trainer: F,
) -> Result<GridSearchResult, FcmError>
where
    F: FnMut(&FcmModel) -> Result<f64, String>,
{
    let mut cells = Vec::new();
    let mut best: Option<(f64, usize, f64, FcmModel)> = None;
    for (c, m) in default_grid() {
        let fitted = match fcm_fit(train_features, c, m, seed) {
            Ok(f) => f,
            Err(_) => {
                cells.push(GridCell { c, m, srcc: None });
                continue;
            }
        };
        match trainer(&fitted.model) {
            Ok(srcc) => {
                cells.push(GridCell { c, m, srcc: Some(srcc) });
                let better = match &best {
                    None => true,
                    // strict: ties keep the earlier (smaller C, then m) cell
                    Some((bs, _, _, _)) => srcc > *bs,
                };
                if better {
                    best = Some((srcc, c, m, fitted.model));
                }
            }
            Err(_) => cells.push(GridCell { c, m, srcc: None }),
        }
    }
    match best {
        Some((_, c, m, model)) => Ok(GridSearchResult { c, m, model, cells }),
        None => Err(FcmError::AllCellsFailed),
    }
}
