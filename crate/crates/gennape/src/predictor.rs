//! Performance predictors: the FLOPs-aware label transform, the FCM-gated
//! MLP ensemble, pairwise comparators, the message-passing baseline
//! regressor, fine-tuning, and the final six-way combination.

use crate::encoder::{graph_inputs, GraphInputs, NODE_FEATURE_DIM};
use crate::fcm::{fcm_membership, FcmModel};
use crate::graph::ComputeGraph;
use crate::metrics;
use crate::nn::{init_weight, Adam, Mlp, ParamSet};
use crate::tape::{Tape, Tensor, VarId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("NonFiniteLoss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("InsufficientSamples: need at least 1, got {0}")]
    InsufficientSamples(usize),
    #[error("MismatchedLengths: {0}")]
    MismatchedLengths(String),
    #[error("invalid standardization std {0}")]
    DegenerateStats(f64),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
}

// ---------------------------------------------------------------------
// label transform: y = Z(A / (log10(F + 1) + 1))

/// Training graphs below this accuracy (percent) are pruned before the
/// transform statistics are fitted.
pub const PRUNE_THRESHOLD_PCT: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformStats {
    pub mean: f64,
    pub std: f64,
}

/// A in percent, F in gigaFLOPs.
pub fn raw_transform(accuracy_pct: f64, flops_g: f64) -> f64 {
    accuracy_pct / ((flops_g + 1.0).log10() + 1.0)
}

/// Fit mean/std of the transformed quantity over the training family.
pub fn fit_transform_stats(
    accuracies_pct: &[f64],
    flops_g: &[f64],
) -> Result<TransformStats, PredictorError> {
    if accuracies_pct.len() != flops_g.len() || accuracies_pct.is_empty() {
        return Err(PredictorError::MismatchedLengths(format!(
            "{} accuracies vs {} flops",
            accuracies_pct.len(),
            flops_g.len()
        )));
    }
    let raw: Vec<f64> = accuracies_pct
        .iter()
        .zip(flops_g)
        .map(|(&a, &f)| raw_transform(a, f))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let var = raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / raw.len() as f64;
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(PredictorError::DegenerateStats(std));
    }
    Ok(TransformStats { mean, std })
}

pub fn transform_label(accuracy_pct: f64, flops_g: f64, stats: &TransformStats) -> f64 {
    (raw_transform(accuracy_pct, flops_g) - stats.mean) / stats.std
}

pub fn inverse_transform(y: f64, flops_g: f64, stats: &TransformStats) -> f64 {
    (y * stats.std + stats.mean) * ((flops_g + 1.0).log10() + 1.0)
}

// ---------------------------------------------------------------------
// MLP-E: membership-gated regressor heads

#[derive(Debug, Clone)]
pub struct HeadConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub use_transform: bool,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 256,
            hidden_layers: 4,
            epochs: 40,
            learning_rate: 1e-4,
            batch_size: 32,
            use_transform: true,
            seed: 0,
        }
    }
}

fn head_mlp(prefix: String, in_dim: usize, config: &HeadConfig, out_dim: usize) -> Mlp {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat(config.hidden).take(config.hidden_layers));
    dims.push(out_dim);
    Mlp::new(prefix, dims)
}

/// FCM-gated ensemble of regressor heads. With no FCM model it degenerates
/// to a single head; with `use_transform` off it regresses accuracy
/// directly, which covers the CL and CL+FCM variants.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub params: ParamSet,
    pub fcm: Option<FcmModel>,
    pub in_dim: usize,
    pub config: HeadConfig,
    pub stats: TransformStats,
}

impl EnsembleModel {
    pub fn head_count(&self) -> usize {
        self.fcm.as_ref().map(|f| f.c()).unwrap_or(1)
    }

    fn heads(&self) -> Vec<Mlp> {
        (0..self.head_count())
            .map(|j| head_mlp(format!("head{j}"), self.in_dim, &self.config, 1))
            .collect()
    }

    pub fn memberships(&self, x: &[f64]) -> Vec<f64> {
        match &self.fcm {
            Some(f) => fcm_membership(x, f),
            None => vec![1.0],
        }
    }
}

fn init_ensemble(
    in_dim: usize,
    fcm: Option<FcmModel>,
    config: &HeadConfig,
) -> EnsembleModel {
    let mut model = EnsembleModel {
        params: ParamSet::new(),
        fcm,
        in_dim,
        config: config.clone(),
        stats: TransformStats { mean: 0.0, std: 1.0 },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for head in model.heads() {
        head.init_into(&mut model.params, &mut rng);
    }
    model
}

/// y' in model target space (transformed or raw accuracy percent).
pub fn ensemble_predict(x: &[f64], model: &EnsembleModel) -> f64 {
    let u = model.memberships(x);
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, false);
    let xv = tape.constant(Tensor::row_vector(x.to_vec()));
    model
        .heads()
        .iter()
        .enumerate()
        .map(|(j, head)| {
            let idx = head.param_indices(&model.params);
            let out = head.forward(&mut tape, xv, &vars, &idx);
            u[j] * tape.value(out).item()
        })
        .sum()
}

/// Accuracy prediction in percent, inverting the label transform when the
/// model was trained with it.
pub fn predict_accuracy(x: &[f64], flops_g: f64, model: &EnsembleModel) -> f64 {
    let y = ensemble_predict(x, model);
    if model.config.use_transform {
        inverse_transform(y, flops_g, &model.stats)
    } else {
        y * model.stats.std + model.stats.mean
    }
}

fn plain_stats(values: &[f64]) -> Result<TransformStats, PredictorError> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    let std = var.sqrt();
    if std <= 0.0 {
        return Err(PredictorError::DegenerateStats(std));
    }
    Ok(TransformStats { mean, std })
}

// membership-weighted forward for a whole batch, shared by training paths
fn ensemble_forward_batch(
    tape: &mut Tape,
    vars: &[VarId],
    model: &EnsembleModel,
    heads: &[Mlp],
    x: VarId,
    memberships: &[Vec<f64>],
    out_dim: usize,
) -> VarId {
    let b = memberships.len();
    let mut acc: Option<VarId> = None;
    for (j, head) in heads.iter().enumerate() {
        let idx = head.param_indices(&model.params);
        let out = head.forward(tape, x, vars, &idx);
        let mut u_col = Tensor::zeros(b, out_dim);
        for (i, u) in memberships.iter().enumerate() {
            for k in 0..out_dim {
                u_col.set(i, k, u[j]);
            }
        }
        let weighted = tape.mul_const(out, u_col);
        acc = Some(match acc {
            Some(a) => tape.add(a, weighted),
            None => weighted,
        });
    }
    acc.unwrap()
}

fn ensemble_training_step(
    model: &mut EnsembleModel,
    adam: &mut Adam,
    heads: &[Mlp],
    features: &[Vec<f64>],
    targets: &[f64],
    memberships: &[Vec<f64>],
    batch: &[usize],
) -> f64 {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, true);
    let b = batch.len();
    let d = model.in_dim;
    let mut xs = Tensor::zeros(b, d);
    let mut ys = Tensor::zeros(b, 1);
    let mut us = Vec::with_capacity(b);
    for (row, &i) in batch.iter().enumerate() {
        for (col, &v) in features[i].iter().enumerate() {
            xs.set(row, col, v);
        }
        ys.set(row, 0, targets[i]);
        us.push(memberships[i].clone());
    }
    let x = tape.constant(xs);
    let t = tape.constant(ys);
    let pred = ensemble_forward_batch(&mut tape, &vars, model, heads, x, &us, 1);
    let loss = crate::nn::mse(&mut tape, pred, t);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss);
    let gvec: Vec<Tensor> = vars.iter().map(|&v| grads.get(v, &tape)).collect();
    adam.step(&mut model.params, &gvec);
    value
}

fn run_head_epochs(
    model: &mut EnsembleModel,
    features: &[Vec<f64>],
    targets: &[f64],
    epochs: usize,
    seed: u64,
    batch_size: usize,
) -> Result<(), PredictorError> {
    let heads = model.heads();
    let memberships: Vec<Vec<f64>> = features.iter().map(|x| model.memberships(x)).collect();
    let mut adam = Adam::new(model.config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..features.len()).collect();
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(batch_size).enumerate() {
            let loss = ensemble_training_step(
                model, &mut adam, &heads, features, targets, &memberships, batch,
            );
            if !loss.is_finite() {
                return Err(PredictorError::NonFiniteLoss { epoch, batch: bi });
            }
        }
    }
    Ok(())
}

/// Train the membership-gated ensemble. Targets are FLOPs-normalized,
/// standardized labels when `use_transform` is set, raw accuracy percent otherwise.
pub fn train_heads(
    features: &[Vec<f64>],
    accuracies_pct: &[f64],
    flops_g: &[f64],
    fcm: Option<FcmModel>,
    config: &HeadConfig,
) -> Result<EnsembleModel, PredictorError> {
    if features.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    if features.len() != accuracies_pct.len() || features.len() != flops_g.len() {
        return Err(PredictorError::MismatchedLengths(format!(
            "{} features, {} labels, {} flops",
            features.len(),
            accuracies_pct.len(),
            flops_g.len()
        )));
    }
    let mut model = init_ensemble(features[0].len(), fcm, config);
    let targets: Vec<f64> = if config.use_transform {
        model.stats = fit_transform_stats(accuracies_pct, flops_g)?;
        accuracies_pct
            .iter()
            .zip(flops_g)
            .map(|(&a, &f)| transform_label(a, f, &model.stats))
            .collect()
    } else {
        // still z-score the raw accuracies: regressing values near 85
        // directly would spend the whole budget moving the output bias
        model.stats = plain_stats(accuracies_pct)?;
        accuracies_pct.iter().map(|&a| (a - model.stats.mean) / model.stats.std).collect()
    };
    run_head_epochs(&mut model, features, &targets, config.epochs, config.seed, config.batch_size)?;
    Ok(model)
}

/// Continue training on a small labeled target-family sample (100 epochs,
/// batch 1 by contract). The input model is untouched. Transform stats stay
/// frozen at their training-family values.
pub fn fine_tune(
    model: &EnsembleModel,
    features: &[Vec<f64>],
    accuracies_pct: &[f64],
    flops_g: &[f64],
    epochs: usize,
    seed: u64,
) -> Result<EnsembleModel, PredictorError> {
    if features.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    let mut tuned = model.clone();
    let targets: Vec<f64> = if tuned.config.use_transform {
        accuracies_pct
            .iter()
            .zip(flops_g)
            .map(|(&a, &f)| transform_label(a, f, &tuned.stats))
            .collect()
    } else {
        accuracies_pct
            .iter()
            .map(|&a| (a - tuned.stats.mean) / tuned.stats.std)
            .collect()
    };
    run_head_epochs(&mut tuned, features, &targets, epochs, seed, 1)?;
    Ok(tuned)
}

// ---------------------------------------------------------------------
// pairwise classifiers

/// Membership-gated latent MLPs plus an antisymmetrized comparator:
/// logit(a, b) = v . (latent_a - latent_b), so logit(a, b) = -logit(b, a)
/// exactly and self-comparison is zero.
#[derive(Debug, Clone)]
pub struct PairwiseModel {
    pub params: ParamSet,
    pub fcm: Option<FcmModel>,
    pub in_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

pub const PAIRWISE_LATENT_DIM: usize = 16;
pub const PAIRWISE_HIDDEN: usize = 128;

impl PairwiseModel {
    pub fn head_count(&self) -> usize {
        self.fcm.as_ref().map(|f| f.c()).unwrap_or(1)
    }

    fn heads(&self) -> Vec<Mlp> {
        (0..self.head_count())
            .map(|j| Mlp::new(format!("lat{j}"), vec![self.in_dim, self.hidden, self.latent_dim]))
            .collect()
    }

    fn memberships(&self, x: &[f64]) -> Vec<f64> {
        match &self.fcm {
            Some(f) => fcm_membership(x, f),
            None => vec![1.0],
        }
    }
}

fn init_pairwise(in_dim: usize, fcm: Option<FcmModel>, seed: u64) -> PairwiseModel {
    let mut model = PairwiseModel {
        params: ParamSet::new(),
        fcm,
        in_dim,
        latent_dim: PAIRWISE_LATENT_DIM,
        hidden: PAIRWISE_HIDDEN,
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for head in model.heads() {
        head.init_into(&mut model.params, &mut rng);
    }
    model.params.push("cmp.w", init_weight(&mut rng, model.latent_dim, 1));
    model
}

fn pairwise_latents_batch(
    tape: &mut Tape,
    vars: &[VarId],
    model: &PairwiseModel,
    heads: &[Mlp],
    features: &[Vec<f64>],
    idxs: &[usize],
) -> VarId {
    let b = idxs.len();
    let d = model.in_dim;
    let mut xs = Tensor::zeros(b, d);
    let mut us = Vec::with_capacity(b);
    for (row, &i) in idxs.iter().enumerate() {
        for (col, &v) in features[i].iter().enumerate() {
            xs.set(row, col, v);
        }
        us.push(model.memberships(&features[i]));
    }
    let x = tape.constant(xs);
    let mut acc: Option<VarId> = None;
    for (j, head) in heads.iter().enumerate() {
        let head_idx = head.param_indices(&model.params);
        let out = head.forward(tape, x, vars, &head_idx);
        let mut u_col = Tensor::zeros(b, model.latent_dim);
        for (i, u) in us.iter().enumerate() {
            for k in 0..model.latent_dim {
                u_col.set(i, k, u[j]);
            }
        }
        let weighted = tape.mul_const(out, u_col);
        acc = Some(match acc {
            Some(a) => tape.add(a, weighted),
            None => weighted,
        });
    }
    acc.unwrap()
}

/// Positive logit means `a` is predicted more accurate than `b`.
pub fn pairwise_score(xa: &[f64], xb: &[f64], model: &PairwiseModel) -> f64 {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, false);
    let heads = model.heads();
    let features = [xa.to_vec(), xb.to_vec()];
    let lat = pairwise_latents_batch(&mut tape, &vars, model, &heads, &features, &[0, 1]);
    let w = vars[model.params.index_of("cmp.w").unwrap()];
    let logits = tape.matmul(lat, w);
    let v = tape.value(logits);
    v.get(0, 0) - v.get(1, 0)
}

/// Train the pairwise classifier with logistic loss over ordered pairs:
/// all ordered pairs when N <= 256, else 64 N seeded pairs per epoch.
pub fn train_pairwise(
    features: &[Vec<f64>],
    accuracies_pct: &[f64],
    fcm: Option<FcmModel>,
    config: &HeadConfig,
) -> Result<PairwiseModel, PredictorError> {
    if features.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    let mut model = init_pairwise(features[0].len(), fcm, config.seed);
    train_pairwise_epochs(&mut model, features, accuracies_pct, config, config.epochs)?;
    Ok(model)
}

/// Fine-tune a pairwise model on target-family samples (snapshot
/// semantics, batch 1 pair).
pub fn fine_tune_pairwise(
    model: &PairwiseModel,
    features: &[Vec<f64>],
    accuracies_pct: &[f64],
    epochs: usize,
    seed: u64,
) -> Result<PairwiseModel, PredictorError> {
    if features.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    let mut tuned = model.clone();
    let config = HeadConfig { seed, batch_size: 1, ..HeadConfig::default() };
    train_pairwise_epochs(&mut tuned, features, accuracies_pct, &config, epochs)?;
    Ok(tuned)
}

fn train_pairwise_epochs(
    model: &mut PairwiseModel,
    features: &[Vec<f64>],
    accuracies_pct: &[f64],
    config: &HeadConfig,
    epochs: usize,
) -> Result<(), PredictorError> {
    let n = features.len();
    let heads = model.heads();
    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9a12));
    for epoch in 0..epochs {
        let mut pairs: Vec<(usize, usize)> = if n <= 256 {
            (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect()
        } else {
            (0..64 * n)
                .map(|_| {
                    let a = rng.gen_range(0..n);
                    let mut b = rng.gen_range(0..n);
                    while b == a {
                        b = rng.gen_range(0..n);
                    }
                    (a, b)
                })
                .collect()
        };
        pairs.shuffle(&mut rng);
        for (bi, chunk) in pairs.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, true);
            let a_idx: Vec<usize> = chunk.iter().map(|&(a, _)| a).collect();
            let b_idx: Vec<usize> = chunk.iter().map(|&(_, b)| b).collect();
            let la = pairwise_latents_batch(&mut tape, &vars, model, &heads, features, &a_idx);
            let lb = pairwise_latents_batch(&mut tape, &vars, model, &heads, features, &b_idx);
            let diff = tape.sub(la, lb);
            let w = vars[model.params.index_of("cmp.w").unwrap()];
            let logits = tape.matmul(diff, w);
            // logistic loss: mean softplus(-y * logit) with y in {+1, -1}
            let mut sign = Tensor::zeros(chunk.len(), 1);
            for (row, &(a, b)) in chunk.iter().enumerate() {
                sign.set(row, 0, if accuracies_pct[a] > accuracies_pct[b] { -1.0 } else { 1.0 });
            }
            let z = tape.mul_const(logits, sign);
            let zeros = tape.constant(Tensor::zeros(chunk.len(), 1));
            let stacked = tape.concat_cols(zeros, z);
            let softplus = tape.logsumexp_rows(stacked);
            let total = tape.sum_all(softplus);
            let loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(PredictorError::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = tape.backward(loss);
            let gvec: Vec<Tensor> = vars.iter().map(|&v| grads.get(v, &tape)).collect();
            adam.step(&mut model.params, &gvec);
        }
    }
    Ok(())
}

/// Per-graph scores induced by mergesort with the model as comparator:
/// best-ranked graph scores 1, worst scores 0.
pub fn pairwise_rank_scores(features: &[Vec<f64>], model: &PairwiseModel) -> Vec<f64> {
    let n = features.len();
    if n == 1 {
        return vec![1.0];
    }
    let (sorted, _) = metrics::rank_via_comparator(n, |a, b| {
        let logit = pairwise_score(&features[a], &features[b], model);
        // positive logit: a better than b, so a sorts first
        if logit > 0.0 {
            std::cmp::Ordering::Less
        } else if logit < 0.0 {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let mut scores = vec![0.0; n];
    for (pos, &item) in sorted.iter().enumerate() {
        scores[item] = 1.0 - pos as f64 / (n - 1) as f64;
    }
    scores
}

// ---------------------------------------------------------------------
// baseline message-passing regressor trained end to end on raw graphs

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub node_dim: usize,
    pub layers: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            node_dim: 32,
            layers: 6,
            head_hidden: 32,
            head_layers: 4,
            epochs: 40,
            learning_rate: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineGnn {
    pub params: ParamSet,
    pub config: BaselineConfig,
    /// Training-label standardization, inverted at prediction time.
    pub stats: TransformStats,
}

fn baseline_head(config: &BaselineConfig) -> Mlp {
    let mut dims = vec![config.node_dim];
    dims.extend(std::iter::repeat(config.head_hidden).take(config.head_layers));
    dims.push(1);
    Mlp::new("bhead", dims)
}

fn init_baseline(config: &BaselineConfig) -> BaselineGnn {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    params.push("bembed.w", init_weight(&mut rng, NODE_FEATURE_DIM, config.node_dim));
    params.push("bembed.b", crate::nn::zeros_row(config.node_dim));
    for l in 0..config.layers {
        params.push(format!("bgnn{l}.w"), init_weight(&mut rng, config.node_dim, config.node_dim));
        params.push(format!("bgnn{l}.b"), crate::nn::zeros_row(config.node_dim));
    }
    baseline_head(config).init_into(&mut params, &mut rng);
    BaselineGnn { params, config: config.clone(), stats: TransformStats { mean: 0.0, std: 1.0 } }
}

fn baseline_forward(
    tape: &mut Tape,
    vars: &[VarId],
    model: &BaselineGnn,
    inputs: &GraphInputs,
) -> VarId {
    let var = |name: &str| vars[model.params.index_of(name).unwrap()];
    let x = tape.constant(inputs.features.clone());
    let adj = tape.constant(inputs.adjacency.clone());
    let mut h = tape.matmul(x, var("bembed.w"));
    h = tape.add_row_broadcast(h, var("bembed.b"));
    h = tape.relu(h);
    for l in 0..model.config.layers {
        let agg = tape.matmul(adj, h);
        let mut next = tape.matmul(agg, var(&format!("bgnn{l}.w")));
        next = tape.add_row_broadcast(next, var(&format!("bgnn{l}.b")));
        h = tape.relu(next);
    }
    let pooled = tape.mean_rows(h);
    let head = baseline_head(&model.config);
    let idx = head.param_indices(&model.params);
    head.forward(tape, pooled, vars, &idx)
}

pub fn baseline_predict(cg: &ComputeGraph, model: &BaselineGnn) -> f64 {
    let inputs = graph_inputs(cg);
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, false);
    let out = baseline_forward(&mut tape, &vars, model, &inputs);
    tape.value(out).item() * model.stats.std + model.stats.mean
}

/// End-to-end regression of accuracy percent from raw graphs.
pub fn train_baseline_gnn(
    graphs: &[ComputeGraph],
    accuracies_pct: &[f64],
    config: &BaselineConfig,
) -> Result<BaselineGnn, PredictorError> {
    if graphs.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    if graphs.len() != accuracies_pct.len() {
        return Err(PredictorError::MismatchedLengths(format!(
            "{} graphs, {} labels",
            graphs.len(),
            accuracies_pct.len()
        )));
    }
    let mut model = init_baseline(config);
    model.stats = plain_stats(accuracies_pct)?;
    let targets: Vec<f64> =
        accuracies_pct.iter().map(|&a| (a - model.stats.mean) / model.stats.std).collect();
    let inputs: Vec<GraphInputs> = graphs.iter().map(graph_inputs).collect();
    baseline_epochs(&mut model, &inputs, &targets, config.epochs, config.seed, config.batch_size)?;
    Ok(model)
}

pub fn fine_tune_baseline(
    model: &BaselineGnn,
    graphs: &[ComputeGraph],
    accuracies_pct: &[f64],
    epochs: usize,
    seed: u64,
) -> Result<BaselineGnn, PredictorError> {
    if graphs.is_empty() {
        return Err(PredictorError::InsufficientSamples(0));
    }
    let mut tuned = model.clone();
    let targets: Vec<f64> =
        accuracies_pct.iter().map(|&a| (a - tuned.stats.mean) / tuned.stats.std).collect();
    let inputs: Vec<GraphInputs> = graphs.iter().map(graph_inputs).collect();
    baseline_epochs(&mut tuned, &inputs, &targets, epochs, seed, 1)?;
    Ok(tuned)
}

fn baseline_epochs(
    model: &mut BaselineGnn,
    inputs: &[GraphInputs],
    targets: &[f64],
    epochs: usize,
    seed: u64,
    batch_size: usize,
) -> Result<(), PredictorError> {
    let mut adam = Adam::new(model.config.learning_rate, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xb61e));
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, true);
            let preds: Vec<VarId> = batch
                .iter()
                .map(|&i| baseline_forward(&mut tape, &vars, model, &inputs[i]))
                .collect();
            let pred = tape.concat_rows(&preds);
            let ys = Tensor::from_vec(batch.len(), 1, batch.iter().map(|&i| targets[i]).collect());
            let t = tape.constant(ys);
            let loss = crate::nn::mse(&mut tape, pred, t);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(PredictorError::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = tape.backward(loss);
            let gvec: Vec<Tensor> = vars.iter().map(|&v| grads.get(v, &tape)).collect();
            adam.step(&mut model.params, &gvec);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// final combination

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    ZeroShot,
    FineTuned,
}

/// Softmax over constituents' Kendall's Tau values.
pub fn kt_softmax_weights(kts: &[f64]) -> Vec<f64> {
    crate::spectral::softmax(kts)
}

/// Combine constituent predictors: each score list is rank-normalized to
/// [0, 1], then convexly combined. Zero-shot weighs all constituents
/// equally; fine-tuned weighs by the softmax of each constituent's
/// Kendall's Tau on the labeled fine-tuning subset, passed as
/// (per-constituent scores on that subset, its labels).
pub fn gennape_combine(
    scores: &[Vec<f64>],
    mode: CombineMode,
    ft_samples: Option<(&[Vec<f64>], &[f64])>,
) -> Result<Vec<f64>, PredictorError> {
    if scores.is_empty() {
        return Err(PredictorError::MismatchedLengths("no constituents".into()));
    }
    let n = scores[0].len();
    if scores.iter().any(|s| s.len() != n) {
        return Err(PredictorError::MismatchedLengths(
            "constituent score lists differ in length".into(),
        ));
    }
    let weights = match mode {
        CombineMode::ZeroShot => vec![1.0 / scores.len() as f64; scores.len()],
        CombineMode::FineTuned => {
            let (ft_scores, ft_labels) = ft_samples.ok_or_else(|| {
                PredictorError::MismatchedLengths("fine-tuned mode needs ft_samples".into())
            })?;
            if ft_scores.len() != scores.len() {
                return Err(PredictorError::MismatchedLengths(format!(
                    "{} ft score lists for {} constituents",
                    ft_scores.len(),
                    scores.len()
                )));
            }
            let kts: Vec<f64> = ft_scores
                .iter()
                .map(|s| metrics::kendall_tau(s, ft_labels))
                .collect::<Result<_, _>>()?;
            kt_softmax_weights(&kts)
        }
    };
    let normalized: Vec<Vec<f64>> =
        scores.iter().map(|s| metrics::normalized_rank_scores(s)).collect();
    Ok((0..n)
        .map(|i| normalized.iter().zip(&weights).map(|(s, w)| w * s[i]).sum())
        .collect())
}
