//! Normalized Laplacian spectra of computation graphs and the pairwise
//! spectral pseudo-distance that weights the contrastive loss.

use crate::graph::{undirected_adjacency, ComputeGraph};
use crate::linalg::{sym_eigenvalues, LinalgError, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of smallest eigenvalues kept in a signature.
pub const DEFAULT_Q: usize = 21;

/// Eigenvalue used to pad signatures of graphs with fewer than q nodes.
/// 2.0 is the spectral upper bound of the normalized Laplacian, so small
/// graphs do not masquerade as graphs with many connected components.
pub const PAD_VALUE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("EigenConvergenceError: {0}")]
    EigenConvergence(#[from] LinalgError),
}

/// The q smallest normalized-Laplacian eigenvalues, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSignature {
    pub eigenvalues: Vec<f64>,
}

impl SpectralSignature {
    pub fn q(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// L = I - D^(-1/2) A D^(-1/2) over the undirected skeleton. Isolated
/// nodes get an all-zero row (L[i][i] = 0), keeping L symmetric PSD.
pub fn normalized_laplacian(cg: &ComputeGraph) -> Matrix {
    let a = undirected_adjacency(cg);
    let n = a.rows;
    let mut deg = vec![0.0f64; n];
    for i in 0..n {
        deg[i] = a.row(i).iter().sum();
    }
    let inv_sqrt: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let off = -inv_sqrt[i] * a.get(i, j) * inv_sqrt[j];
            let v = if i == j {
                if deg[i] > 0.0 {
                    1.0 + off
                } else {
                    0.0
                }
            } else {
                off
            };
            l.set(i, j, v);
        }
    }
    l
}

/// q smallest eigenvalues of the normalized Laplacian, padded with 2.0
/// when the graph has fewer than q nodes.
pub fn signature_q(cg: &ComputeGraph, q: usize) -> Result<SpectralSignature, SpectralError> {
    let l = normalized_laplacian(cg);
    let mut vals = sym_eigenvalues(&l)?;
    // clamp tiny numerical excursions into [0, 2]
    for v in vals.iter_mut() {
        *v = v.clamp(0.0, 2.0);
    }
    vals.truncate(q);
    while vals.len() < q {
        vals.push(PAD_VALUE);
    }
    Ok(SpectralSignature { eigenvalues: vals })
}

pub fn signature(cg: &ComputeGraph) -> Result<SpectralSignature, SpectralError> {
    signature_q(cg, DEFAULT_Q)
}

/// Euclidean distance between two spectral signatures.
pub fn signature_distance(a: &SpectralSignature, b: &SpectralSignature) -> f64 {
    assert_eq!(a.q(), b.q(), "signatures must have equal length");
    a.eigenvalues
        .iter()
        .zip(&b.eigenvalues)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pseudo-distance between two computation graphs.
pub fn spectral_distance(g1: &ComputeGraph, g2: &ComputeGraph) -> Result<f64, SpectralError> {
    Ok(signature_distance(&signature(g1)?, &signature(g2)?))
}

/// Softmax weights over sign * sigma(i, l) for l != i. The literal reading
/// of the loss uses sign = +1 (distant graphs weighted more); sign = -1
/// gives the similarity-favoring variant.
pub fn alpha_weights(signatures: &[SpectralSignature], i: usize, sign: f64) -> Vec<f64> {
    assert!(signatures.len() >= 2, "need at least two signatures");
    assert!(sign == 1.0 || sign == -1.0, "sign must be +1 or -1");
    let scores: Vec<f64> = signatures
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != i)
        .map(|(_, s)| sign * signature_distance(&signatures[i], s))
        .collect();
    softmax(&scores)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
