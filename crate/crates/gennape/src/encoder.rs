//! Contrastive graph encoder.
//!
//! Two branches over node features — first-order message passing and a
//! single two-head attention layer — are mean-pooled and concatenated into
//! a 128-dim embedding. Training minimizes a contrastive loss over two
//! dropout views per graph, with positives weighted by the softmax of
//! spectral distances, plus an auxiliary head regressing standardized
//! log-FLOPs.

use crate::graph::{ComputeGraph, OP_KIND_COUNT};
use crate::linalg::Matrix;
use crate::nn::{init_weight, mse, zeros_row, Adam, Mlp, ParamSet};
use crate::spectral::{signature_distance, SpectralSignature};
use crate::tape::{Tape, Tensor, VarId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

// one-hot op kind, log-scaled (h, w, c) for input and output shapes,
// log-scaled weight element count, bias flag
pub const NODE_FEATURE_DIM: usize = OP_KIND_COUNT + 6 + 1 + 1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("DegenerateProjection: pre-normalization norm {0} < 1e-12")]
    DegenerateProjection(f64),
    #[error("NonFiniteLoss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub branch_dim: usize,
    pub proj_dim: usize,
    pub gnn_layers: usize,
    pub attn_heads: usize,
    pub dropout_rate: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub q: usize,
    pub alpha_sign: f64,
    pub aux_flops_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 128,
            branch_dim: 64,
            proj_dim: 32,
            gnn_layers: 4,
            attn_heads: 2,
            dropout_rate: 0.1,
            temperature: 0.05,
            batch_size: 128,
            q: crate::spectral::DEFAULT_Q,
            alpha_sign: 1.0,
            aux_flops_weight: 1.0,
            epochs: 8,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embed_dim != 2 * self.branch_dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "embed_dim {} must be 2 * branch_dim {}",
                self.embed_dim, self.branch_dim
            )));
        }
        if self.temperature <= 0.0 || !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EncoderError::ShapeMismatch(
                "temperature must be > 0 and dropout_rate in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.branch_dim / self.attn_heads
    }
}

/// Immutable parameter snapshot plus the label-standardization stats of
/// the auxiliary FLOPs head (fixed at training time).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub params: ParamSet,
    pub aux_mean: f64,
    pub aux_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

pub fn init_params(config: &EncoderConfig, seed: u64) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let b = config.branch_dim;
    params.push("embed.w", init_weight(&mut rng, NODE_FEATURE_DIM, b));
    params.push("embed.b", zeros_row(b));
    for l in 0..config.gnn_layers {
        params.push(format!("gnn{l}.w"), init_weight(&mut rng, b, b));
        params.push(format!("gnn{l}.b"), zeros_row(b));
    }
    let dk = config.head_dim();
    for h in 0..config.attn_heads {
        params.push(format!("attn.h{h}.wq"), init_weight(&mut rng, b, dk));
        params.push(format!("attn.h{h}.wk"), init_weight(&mut rng, b, dk));
        params.push(format!("attn.h{h}.wv"), init_weight(&mut rng, b, dk));
    }
    params.push("attn.wo", init_weight(&mut rng, b, b));
    params.push("attn.bo", zeros_row(b));
    Mlp::new("proj", vec![config.embed_dim, config.branch_dim, config.proj_dim])
        .init_into(&mut params, &mut rng);
    Mlp::new("aux", vec![config.embed_dim, config.branch_dim, 1]).init_into(&mut params, &mut rng);
    EncoderParams { params, aux_mean: 0.0, aux_std: 1.0 }
}

/// Static per-graph inputs to the forward pass.
pub struct GraphInputs {
    pub features: Tensor,
    /// Row-normalized undirected adjacency with self loops.
    pub adjacency: Tensor,
}

pub fn node_features(cg: &ComputeGraph) -> Tensor {
    let n = cg.node_count();
    let mut t = Tensor::zeros(n, NODE_FEATURE_DIM);
    for (i, node) in cg.nodes().iter().enumerate() {
        let mut j = 0;
        t.set(i, node.kind.index(), 1.0);
        j += OP_KIND_COUNT;
        for shape in [&node.input_shape, &node.output_shape] {
            for v in [shape.height, shape.width, shape.channels] {
                t.set(i, j, (1.0 + v as f64).ln());
                j += 1;
            }
        }
        let welems: usize = node
            .weight_shape
            .as_ref()
            .map(|dims| dims.iter().product())
            .unwrap_or(0);
        t.set(i, j, (1.0 + welems as f64).ln());
        t.set(i, j + 1, if node.has_bias { 1.0 } else { 0.0 });
    }
    t
}

pub fn graph_inputs(cg: &ComputeGraph) -> GraphInputs {
    let n = cg.node_count();
    let a = crate::graph::undirected_adjacency(cg);
    let mut adj = Tensor::zeros(n, n);
    for i in 0..n {
        let mut degree = 1.0;
        for j in 0..n {
            degree += a.get(i, j);
        }
        for j in 0..n {
            let v = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            adj.set(i, j, v / degree);
        }
    }
    GraphInputs { features: node_features(cg), adjacency: adj }
}

fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Tensor {
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Forward pass for one graph; returns the 1 x embed_dim embedding row.
/// `dropout_seed` of `None` disables dropout (inference).
pub fn forward_graph(
    tape: &mut Tape,
    vars: &[VarId],
    params: &ParamSet,
    inputs: &GraphInputs,
    config: &EncoderConfig,
    dropout_seed: Option<u64>,
) -> VarId {
    let var = |name: &str| vars[params.index_of(name).unwrap()];
    let n = inputs.features.rows;
    let b = config.branch_dim;

    let x = tape.constant(inputs.features.clone());
    let adj = tape.constant(inputs.adjacency.clone());
    let mut h = tape.matmul(x, var("embed.w"));
    h = tape.add_row_broadcast(h, var("embed.b"));
    h = tape.relu(h);

    let mut drop_rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    if let Some(rng) = drop_rng.as_mut() {
        let mask = dropout_mask(rng, n, b, config.dropout_rate);
        h = tape.mul_const(h, mask);
    }

    // message-passing branch: H' = relu(adj H W + b)
    let mut g = h;
    for l in 0..config.gnn_layers {
        let agg = tape.matmul(adj, g);
        let mut next = tape.matmul(agg, var(&format!("gnn{l}.w")));
        next = tape.add_row_broadcast(next, var(&format!("gnn{l}.b")));
        g = tape.relu(next);
    }
    let gnn_pool = tape.mean_rows(g);

    // attention branch: one layer of scaled dot-product attention
    let dk = config.head_dim();
    let mut heads = Vec::with_capacity(config.attn_heads);
    for head in 0..config.attn_heads {
        let q = tape.matmul(h, var(&format!("attn.h{head}.wq")));
        let k = tape.matmul(h, var(&format!("attn.h{head}.wk")));
        let v = tape.matmul(h, var(&format!("attn.h{head}.wv")));
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = tape.softmax_rows(scaled);
        heads.push(tape.matmul(weights, v));
    }
    let mut attn = heads[0];
    for &head in &heads[1..] {
        attn = tape.concat_cols(attn, head);
    }
    attn = tape.matmul(attn, var("attn.wo"));
    attn = tape.add_row_broadcast(attn, var("attn.bo"));
    if let Some(rng) = drop_rng.as_mut() {
        let mask = dropout_mask(rng, n, b, config.dropout_rate);
        attn = tape.mul_const(attn, mask);
    }
    let attn_pool = tape.mean_rows(attn);

    tape.concat_cols(gnn_pool, attn_pool)
}

/// Embed one graph. Deterministic given (cg, params, dropout_seed).
pub fn encode(
    cg: &ComputeGraph,
    params: &EncoderParams,
    config: &EncoderConfig,
    dropout_seed: Option<u64>,
) -> Embedding {
    let inputs = graph_inputs(cg);
    let mut tape = Tape::new();
    let vars = params.params.bind(&mut tape, false);
    let out = forward_graph(&mut tape, &vars, &params.params, &inputs, config, dropout_seed);
    Embedding { h: tape.value(out).data.clone() }
}

fn proj_mlp(config: &EncoderConfig) -> Mlp {
    Mlp::new("proj", vec![config.embed_dim, config.branch_dim, config.proj_dim])
}

fn aux_mlp(config: &EncoderConfig) -> Mlp {
    Mlp::new("aux", vec![config.embed_dim, config.branch_dim, 1])
}

/// Project an embedding onto the unit sphere in proj_dim dimensions.
pub fn project(
    h: &Embedding,
    params: &EncoderParams,
    config: &EncoderConfig,
) -> Result<Projection, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.params.bind(&mut tape, false);
    let mlp = proj_mlp(config);
    let idx = mlp.param_indices(&params.params);
    let x = tape.constant(Tensor::row_vector(h.h.clone()));
    let raw = mlp.forward(&mut tape, x, &vars, &idx);
    let norm = tape.value(raw).data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(EncoderError::DegenerateProjection(norm));
    }
    let z = tape.l2_normalize_rows(raw);
    Ok(Projection { z: tape.value(z).data.clone() })
}

/// Cosine similarity scaled by 1/temperature.
pub fn sim(a: &Projection, b: &Projection, temperature: f64) -> f64 {
    a.z.iter().zip(&b.z).map(|(x, y)| x * y).sum::<f64>() / temperature
}

/// Build the 2N x 2N weight matrix for the contrastive loss: row i is the
/// softmax of `sign * sigma(i, l)` over l != i, where sigma is the spectral
/// distance between the underlying graphs. Diagonal is zero; rows sum to 1.
pub fn batch_alphas(signatures: &[&SpectralSignature], sign: f64) -> Matrix {
    let n = signatures.len();
    let mut alphas = Matrix::zeros(n, n);
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&l| l != i)
            .map(|l| sign * signature_distance(signatures[i], signatures[l]))
            .collect();
        let w = crate::spectral::softmax(&logits);
        let mut wi = w.iter();
        for l in 0..n {
            if l != i {
                alphas.set(i, l, *wi.next().unwrap());
            }
        }
    }
    alphas
}

// large-but-finite mask value; -inf would propagate NaN through gradients
const DIAG_MASK: f64 = -1e30;

/// Contrastive loss over a tape: z is a 2N x p matrix of unit rows, alphas
/// a 2N x 2N convex weight matrix with zero diagonal. Returns the scalar
/// loss variable. Because each alpha row sums to one, the loss reduces to
/// sum_i logsumexp_{r != i}(s_ir) - sum_{i,l} alpha_il * s_il.
pub fn cl_loss_on_tape(tape: &mut Tape, z: VarId, alphas: &Matrix, temperature: f64) -> VarId {
    let n = tape.value(z).rows;
    assert!(n >= 2, "need at least two projections");
    assert_eq!((alphas.rows, alphas.cols), (n, n));
    let zt = tape.transpose(z);
    let s = tape.matmul(z, zt);
    let s = tape.scale(s, 1.0 / temperature);
    let mut mask = Tensor::zeros(n, n);
    for i in 0..n {
        mask.set(i, i, DIAG_MASK);
    }
    let masked = tape.add_const(s, mask);
    let lse = tape.logsumexp_rows(masked);
    let pos_weights = tape.constant(Tensor::from_vec(n, n, alphas.data.clone()));
    let weighted = tape.mul_elem(pos_weights, masked);
    let lse_sum = tape.sum_all(lse);
    let pos_sum = tape.sum_all(weighted);
    tape.sub(lse_sum, pos_sum)
}

/// Loss value plus the gradient with respect to each projection row.
pub fn cl_loss(
    projections: &[Projection],
    alphas: &Matrix,
    temperature: f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = projections.len();
    let p = projections[0].z.len();
    let mut data = Vec::with_capacity(n * p);
    for proj in projections {
        data.extend_from_slice(&proj.z);
    }
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_vec(n, p, data), true);
    let loss = cl_loss_on_tape(&mut tape, z, alphas, temperature);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    let gz = grads.get(z, &tape);
    let rows = (0..n).map(|i| gz.data[i * p..(i + 1) * p].to_vec()).collect();
    (value, rows)
}

/// Train the encoder on a set of graphs. Deterministic given the config
/// seed; returns the parameter snapshot and per-epoch mean batch loss.
pub fn train_encoder(
    dataset: &[ComputeGraph],
    config: &EncoderConfig,
) -> Result<(EncoderParams, TrainingLog), EncoderError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    let mut encoder = init_params(config, config.seed);
    let inputs: Vec<GraphInputs> = dataset.iter().map(graph_inputs).collect();
    let signatures: Vec<SpectralSignature> = dataset
        .iter()
        .map(|cg| crate::spectral::signature_q(cg, config.q))
        .collect::<Result<_, _>>()?;
    let log_flops: Vec<f64> = dataset
        .iter()
        .map(|cg| (crate::graph::compute_flops(cg) + 1.0).log10())
        .collect();
    let fmean = log_flops.iter().sum::<f64>() / log_flops.len() as f64;
    let fvar =
        log_flops.iter().map(|f| (f - fmean).powi(2)).sum::<f64>() / log_flops.len() as f64;
    let fstd = if fvar.sqrt() > 1e-12 { fvar.sqrt() } else { 1.0 };
    encoder.aux_mean = fmean;
    encoder.aux_std = fstd;
    let targets: Vec<f64> = log_flops.iter().map(|f| (f - fmean) / fstd).collect();

    let mut adam = Adam::new(config.learning_rate, &encoder.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let proj = proj_mlp(config);
    let aux = aux_mlp(config);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a single graph yields a degenerate (zero-gradient) batch
            }
            let mut tape = Tape::new();
            let vars = encoder.params.bind(&mut tape, true);
            let mut rows = Vec::with_capacity(2 * chunk.len());
            let mut batch_sigs = Vec::with_capacity(2 * chunk.len());
            let mut batch_targets = Vec::with_capacity(2 * chunk.len());
            for &gi in chunk {
                for view in 0..2u64 {
                    let seed = rng.gen::<u64>().wrapping_add(view);
                    rows.push(forward_graph(
                        &mut tape,
                        &vars,
                        &encoder.params,
                        &inputs[gi],
                        config,
                        Some(seed),
                    ));
                    batch_sigs.push(&signatures[gi]);
                    batch_targets.push(targets[gi]);
                }
            }
            let h = tape.concat_rows(&rows);
            let proj_idx = proj.param_indices(&encoder.params);
            let raw = proj.forward(&mut tape, h, &vars, &proj_idx);
            let z = tape.l2_normalize_rows(raw);
            let alphas = batch_alphas(&batch_sigs, config.alpha_sign);
            let contrastive = cl_loss_on_tape(&mut tape, z, &alphas, config.temperature);

            let aux_idx = aux.param_indices(&encoder.params);
            let aux_pred = aux.forward(&mut tape, h, &vars, &aux_idx);
            let target = tape.constant(Tensor::from_vec(batch_targets.len(), 1, batch_targets));
            let aux_loss = mse(&mut tape, aux_pred, target);
            let aux_scaled = tape.scale(aux_loss, config.aux_flops_weight);
            let loss = tape.add(contrastive, aux_scaled);

            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(EncoderError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            epoch_loss += loss_value;
            batches += 1;
            let grads = tape.backward(loss);
            let gvec: Vec<Tensor> = vars.iter().map(|&v| grads.get(v, &tape)).collect();
            adam.step(&mut encoder.params, &gvec);
        }
        epoch_losses.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
    }
    Ok((encoder, TrainingLog { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, chain_graph, NodeAttrs, OpKind, TensorShape};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 16,
            branch_dim: 8,
            proj_dim: 4,
            gnn_layers: 2,
            batch_size: 8,
            epochs: 3,
            learning_rate: 1e-3,
            ..EncoderConfig::default()
        }
    }

    fn diamond_graph(name: &str) -> ComputeGraph {
        let s = TensorShape { height: 8, width: 8, channels: 4 };
        let nodes = vec![
            NodeAttrs::pointwise(OpKind::Input, s),
            NodeAttrs::pointwise(OpKind::Relu, s),
            NodeAttrs::pointwise(OpKind::Tanh, s),
            NodeAttrs::pointwise(OpKind::Add, s),
            NodeAttrs::pointwise(OpKind::Output, s),
        ];
        let edges = vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)];
        build_graph(nodes, edges, name).unwrap()
    }

    #[test]
    fn encode_is_deterministic_per_seed() {
        let cg = chain_graph("g");
        let config = small_config();
        let params = init_params(&config, 7);
        let a = encode(&cg, &params, &config, Some(5));
        let b = encode(&cg, &params, &config, Some(5));
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_dropout_seeds_give_distinct_views() {
        let cg = chain_graph("g");
        let config = small_config();
        let params = init_params(&config, 7);
        let a = encode(&cg, &params, &config, Some(1));
        let b = encode(&cg, &params, &config, Some(2));
        assert_ne!(a, b);
    }

    #[test]
    fn inference_mode_ignores_randomness() {
        let cg = chain_graph("g");
        let config = small_config();
        let params = init_params(&config, 7);
        let a = encode(&cg, &params, &config, None);
        let b = encode(&cg, &params, &config, None);
        assert_eq!(a, b);
        assert_eq!(a.h.len(), config.embed_dim);
    }

    #[test]
    fn encode_invariant_under_node_permutation() {
        // permute the node list (and relabel edges) of a graph with
        // parallel branches; canonicalization plus pooling must make the
        // embedding agree to 1e-6
        let config = small_config();
        let params = init_params(&config, 3);
        let base = diamond_graph("perm");
        let reference = encode(&base, &params, &config, None);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut perm: Vec<usize> = (0..base.node_count()).collect();
            perm.shuffle(&mut rng);
            // perm[new] = old
            let mut inverse = vec![0usize; perm.len()];
            for (new, &old) in perm.iter().enumerate() {
                inverse[old] = new;
            }
            let nodes: Vec<NodeAttrs> = perm.iter().map(|&old| base.nodes()[old].clone()).collect();
            let edges: Vec<(usize, usize)> = base
                .edges()
                .iter()
                .map(|&(s, d)| (inverse[s], inverse[d]))
                .collect();
            let permuted = build_graph(nodes, edges, "perm").unwrap();
            let out = encode(&permuted, &params, &config, None);
            for (a, b) in reference.h.iter().zip(&out.h) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_is_unit_norm_and_sim_self_is_inverse_temperature() {
        let cg = chain_graph("g");
        let config = small_config();
        let params = init_params(&config, 1);
        let h = encode(&cg, &params, &config, None);
        let z = project(&h, &params, &config).unwrap();
        let norm: f64 = z.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!((sim(&z, &z, 0.05) - 20.0).abs() < 1e-9);
        let other = project(&encode(&diamond_graph("d"), &params, &config, None), &params, &config)
            .unwrap();
        assert!((sim(&z, &other, 0.05) - sim(&other, &z, 0.05)).abs() < 1e-12);
    }

    fn uniform_alphas(n: usize) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for l in 0..n {
                if l != i {
                    a.set(i, l, 1.0 / (n - 1) as f64);
                }
            }
        }
        a
    }

    #[test]
    fn cl_loss_single_pair_is_zero() {
        let z = Projection { z: vec![0.6, 0.8] };
        let w = Projection { z: vec![0.8, -0.6] };
        let (loss, _) = cl_loss(&[z, w], &uniform_alphas(2), 0.05);
        assert!(loss.abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn cl_loss_identical_projections_closed_form() {
        // all similarities equal -> each term log(2N-1); 2N=4 -> 4 ln 3
        let p = Projection { z: vec![1.0, 0.0, 0.0] };
        let batch = vec![p.clone(), p.clone(), p.clone(), p];
        let (loss, _) = cl_loss(&batch, &uniform_alphas(4), 0.05);
        assert!((loss - 4.0 * 3.0f64.ln()).abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn cl_loss_gradient_matches_finite_differences() {
        // 2N=6, p=4 instance; note the finite-difference probe perturbs the
        // raw z entries (the loss is defined on arbitrary rows, the unit
        // norm is enforced upstream)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 6;
        let p = 4;
        let mut alphas = Matrix::zeros(n, n);
        for i in 0..n {
            let mut row: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.1..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            let mut it = row.into_iter();
            for l in 0..n {
                if l != i {
                    alphas.set(i, l, it.next().unwrap());
                }
            }
        }
        let base: Vec<Projection> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                Projection { z: v.into_iter().map(|x| x / norm).collect() }
            })
            .collect();
        let (_, grads) = cl_loss(&base, &alphas, 0.5);
        let step = 1e-4;
        for i in 0..n {
            for j in 0..p {
                let mut plus = base.clone();
                plus[i].z[j] += step;
                let mut minus = base.clone();
                minus[i].z[j] -= step;
                let (lp, _) = cl_loss(&plus, &alphas, 0.5);
                let (lm, _) = cl_loss(&minus, &alphas, 0.5);
                let fd = (lp - lm) / (2.0 * step);
                let g = grads[i][j];
                let denom = g.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((g - fd) / denom).abs() < 1e-4,
                    "grad mismatch at ({i},{j}): analytic {g}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn cl_loss_invariant_under_batch_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 6;
        let base: Vec<Projection> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                Projection { z: v.into_iter().map(|x| x / norm).collect() }
            })
            .collect();
        let mut alphas = uniform_alphas(n);
        // make the rows non-uniform so permutation actually exercises them
        for i in 0..n {
            for l in 0..n {
                if l != i {
                    alphas.set(i, l, alphas.get(i, l) * (1.0 + 0.1 * ((i * n + l) as f64).sin()));
                }
            }
            let s: f64 = (0..n).map(|l| alphas.get(i, l)).sum();
            for l in 0..n {
                alphas.set(i, l, alphas.get(i, l) / s);
            }
        }
        let (reference, _) = cl_loss(&base, &alphas, 0.1);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<Projection> = perm.iter().map(|&i| base[i].clone()).collect();
        let mut pa = Matrix::zeros(n, n);
        for (ni, &oi) in perm.iter().enumerate() {
            for (nl, &ol) in perm.iter().enumerate() {
                pa.set(ni, nl, alphas.get(oi, ol));
            }
        }
        let (loss, _) = cl_loss(&permuted, &pa, 0.1);
        assert!((loss - reference).abs() < 1e-9);
    }

    #[test]
    fn batch_alphas_rows_are_convex() {
        use crate::spectral::signature;
        let sigs = vec![
            signature(&chain_graph("a")).unwrap(),
            signature(&diamond_graph("b")).unwrap(),
            signature(&chain_graph("c")).unwrap(),
        ];
        let refs: Vec<&SpectralSignature> = sigs.iter().collect();
        let alphas = batch_alphas(&refs, 1.0);
        for i in 0..3 {
            assert_eq!(alphas.get(i, i), 0.0);
            let s: f64 = (0..3).map(|l| alphas.get(i, l)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    fn tiny_dataset(n: usize) -> Vec<ComputeGraph> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    chain_graph(&format!("chain{i}"))
                } else {
                    diamond_graph(&format!("diamond{i}"))
                }
            })
            .collect()
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = tiny_dataset(12);
        let config = EncoderConfig { seed: 21, epochs: 2, ..small_config() };
        let (a, la) = train_encoder(&data, &config).unwrap();
        let (b, lb) = train_encoder(&data, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.epoch_losses, lb.epoch_losses);
    }

    #[test]
    fn training_reduces_loss() {
        let data = tiny_dataset(24);
        let config = EncoderConfig { epochs: 6, seed: 4, ..small_config() };
        let (params, log) = train_encoder(&data, &config).unwrap();
        assert!(params.params.all_finite());
        assert!(
            log.epoch_losses.last().unwrap() < log.epoch_losses.first().unwrap(),
            "losses: {:?}",
            log.epoch_losses
        );
    }

    #[test]
    fn zero_aux_weight_freezes_aux_head() {
        let data = tiny_dataset(12);
        let config = EncoderConfig {
            aux_flops_weight: 0.0,
            epochs: 2,
            seed: 9,
            ..small_config()
        };
        let initial = init_params(&config, config.seed);
        let (trained, _) = train_encoder(&data, &config).unwrap();
        for (name, tensor) in trained.params.iter() {
            if name.starts_with("aux.") {
                assert_eq!(tensor, initial.params.get(name), "{name} moved with lambda=0");
            } else if name.starts_with("proj.") || name.starts_with("embed.") {
                assert_ne!(tensor, initial.params.get(name), "{name} did not train");
            }
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_encoder(&[], &small_config()),
            Err(EncoderError::EmptyDataset)
        ));
    }
}
