//! Synthetic architecture families and a deterministic accuracy oracle.
//!
//! Four generators produce valid computation graphs that follow distinct
//! backbone rules, standing in for real labeled benchmarks at desk scale.
//! Identity nodes act as block-boundary markers so tests can count cells,
//! blocks, stages and paths structurally.

use crate::graph::{
    build_graph, compute_flops, serialize, ComputeGraph, GraphError, NodeAttrs, OpKind,
    TensorShape, OP_KIND_COUNT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("GenerationExhausted: could not produce {wanted} unique graphs in {attempts} attempts")]
    GenerationExhausted { wanted: usize, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Nb101Like,
    HiamlLike,
    InceptionLike,
    TwopathLike,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Nb101Like,
        FamilyKind::HiamlLike,
        FamilyKind::InceptionLike,
        FamilyKind::TwopathLike,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            FamilyKind::Nb101Like => "nb101_like",
            FamilyKind::HiamlLike => "hiaml_like",
            FamilyKind::InceptionLike => "inception_like",
            FamilyKind::TwopathLike => "twopath_like",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| format!("unknown family {s:?}"))
    }
}

const STEM_CHANNELS: usize = 16;
const NUM_CLASSES: usize = 10;

// -------------------------------------------------------------------------
// graph assembly helpers

struct Builder {
    nodes: Vec<NodeAttrs>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn new(input: TensorShape) -> (Self, usize) {
        let b = Builder { nodes: vec![NodeAttrs::pointwise(OpKind::Input, input)], edges: vec![] };
        (b, 0)
    }

    fn add(&mut self, attrs: NodeAttrs, preds: &[usize]) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(attrs);
        for &p in preds {
            self.edges.push((p, idx));
        }
        idx
    }

    fn marker(&mut self, pred: usize, shape: TensorShape) -> usize {
        self.add(NodeAttrs::pointwise(OpKind::Identity, shape), &[pred])
    }

    fn head(&mut self, pred: usize, shape: TensorShape, name: &str) -> Result<ComputeGraph, GraphError> {
        let gap = self.add(NodeAttrs::global_avg_pool(shape), &[pred]);
        let pooled = TensorShape::new(1, 1, shape.channels);
        let lin = self.add(NodeAttrs::linear(shape.channels, NUM_CLASSES, true), &[gap]);
        let _ = pooled;
        let out_shape = TensorShape::new(1, 1, NUM_CLASSES);
        let out = self.add(NodeAttrs::pointwise(OpKind::Output, out_shape), &[lin]);
        let _ = out;
        build_graph(std::mem::take(&mut self.nodes), std::mem::take(&mut self.edges), name)
    }
}

fn conv(s_in: TensorShape, s_out: TensorShape, k: usize) -> NodeAttrs {
    NodeAttrs::conv2d(k, k, s_in, s_out, false)
}

// shape-preserving operators used inside blocks
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockOp {
    Conv3,
    Conv1,
    Dw3,
    Bn,
    Relu,
    Swish,
    MaxPool3,
    AvgPool3,
}

impl BlockOp {
    fn attrs(self, s: TensorShape) -> NodeAttrs {
        match self {
            BlockOp::Conv3 => conv(s, s, 3),
            BlockOp::Conv1 => conv(s, s, 1),
            BlockOp::Dw3 => NodeAttrs::depthwise(3, 3, s, s, false),
            BlockOp::Bn => NodeAttrs::pointwise(OpKind::BatchNorm, s),
            BlockOp::Relu => NodeAttrs::pointwise(OpKind::Relu, s),
            BlockOp::Swish => NodeAttrs::pointwise(OpKind::Swish, s),
            BlockOp::MaxPool3 => NodeAttrs::pool(OpKind::MaxPool, s, s),
            BlockOp::AvgPool3 => NodeAttrs::pool(OpKind::AvgPool, s, s),
        }
    }

    fn is_conv(self) -> bool {
        matches!(self, BlockOp::Conv3 | BlockOp::Conv1 | BlockOp::Dw3)
    }
}

const ALL_BLOCK_OPS: [BlockOp; 8] = [
    BlockOp::Conv3,
    BlockOp::Conv1,
    BlockOp::Dw3,
    BlockOp::Bn,
    BlockOp::Relu,
    BlockOp::Swish,
    BlockOp::MaxPool3,
    BlockOp::AvgPool3,
];

// -------------------------------------------------------------------------
// nb101_like: stem conv 3->16 at 32x32, three stacked cells of up to five
// choice ops (Conv-BN-ReLU 3x3 or 1x1 triples, or max-pool) with random
// internal wiring merged by Add, then GAP -> linear head. A stem marker
// plus one marker per cell delimit the cells.

fn gen_nb101(rng: &mut ChaCha8Rng, name: &str) -> Result<ComputeGraph, FamilyError> {
    let s0 = TensorShape::new(32, 32, 3);
    let s = TensorShape::new(32, 32, STEM_CHANNELS);
    let (mut b, input) = Builder::new(s0);
    let mut tip = b.add(conv(s0, s, 3), &[input]);
    tip = b.add(NodeAttrs::pointwise(OpKind::BatchNorm, s), &[tip]);
    tip = b.add(NodeAttrs::pointwise(OpKind::Relu, s), &[tip]);
    tip = b.marker(tip, s);
    for _ in 0..3 {
        let entry = tip;
        let k = rng.gen_range(1..=5);
        let mut cell_nodes = vec![entry];
        let mut consumed = HashSet::new();
        for _ in 0..k {
            let src = cell_nodes[rng.gen_range(0..cell_nodes.len())];
            consumed.insert(src);
            let op_tip = match rng.gen_range(0..3) {
                0 | 1 => {
                    let kernel = if rng.gen_range(0..2) == 0 { 3 } else { 1 };
                    let c = b.add(conv(s, s, kernel), &[src]);
                    let bn = b.add(NodeAttrs::pointwise(OpKind::BatchNorm, s), &[c]);
                    b.add(NodeAttrs::pointwise(OpKind::Relu, s), &[bn])
                }
                _ => b.add(NodeAttrs::pool(OpKind::MaxPool, s, s), &[src]),
            };
            cell_nodes.push(op_tip);
        }
        let leaves: Vec<usize> = cell_nodes[1..]
            .iter()
            .copied()
            .filter(|n| !consumed.contains(n))
            .collect();
        tip = if leaves.len() > 1 {
            b.add(NodeAttrs::pointwise(OpKind::Add, s), &leaves)
        } else {
            leaves[0]
        };
        tip = b.marker(tip, s);
    }
    Ok(b.head(tip, s, name)?)
}

// -------------------------------------------------------------------------
// hiaml_like: a fixed library of 14 block templates (up to 4 operators,
// optional residual Add), 4 stages of 2 identical blocks each.

const HIAML_TEMPLATE_SEED: u64 = 0x4849_414d;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BlockTemplate {
    ops: Vec<BlockOp>,
    residual: bool,
}

pub(crate) fn hiaml_templates() -> Vec<BlockTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(HIAML_TEMPLATE_SEED);
    let mut templates: Vec<BlockTemplate> = Vec::new();
    while templates.len() < 14 {
        let len = rng.gen_range(1..=4);
        let ops: Vec<BlockOp> =
            (0..len).map(|_| ALL_BLOCK_OPS[rng.gen_range(0..ALL_BLOCK_OPS.len())]).collect();
        let residual = rng.gen_range(0..2) == 0;
        let t = BlockTemplate { ops, residual };
        if !templates.contains(&t) {
            templates.push(t);
        }
    }
    templates
}

fn instantiate_block(b: &mut Builder, entry: usize, s: TensorShape, t: &BlockTemplate) -> usize {
    let mut tip = entry;
    for &op in &t.ops {
        tip = b.add(op.attrs(s), &[tip]);
    }
    if t.residual && tip != entry {
        tip = b.add(NodeAttrs::pointwise(OpKind::Add, s), &[entry, tip]);
    }
    b.marker(tip, s)
}

fn gen_hiaml(rng: &mut ChaCha8Rng, name: &str) -> Result<ComputeGraph, FamilyError> {
    let templates = hiaml_templates();
    let s0 = TensorShape::new(32, 32, 3);
    let s = TensorShape::new(16, 16, STEM_CHANNELS);
    let (mut b, input) = Builder::new(s0);
    let mut tip = b.add(conv(s0, s, 3), &[input]);
    tip = b.add(NodeAttrs::pointwise(OpKind::BatchNorm, s), &[tip]);
    tip = b.add(NodeAttrs::pointwise(OpKind::Relu, s), &[tip]);
    tip = b.marker(tip, s);
    for _ in 0..4 {
        let t = &templates[rng.gen_range(0..templates.len())];
        tip = instantiate_block(&mut b, tip, s, t);
        tip = instantiate_block(&mut b, tip, s, t);
    }
    Ok(b.head(tip, s, name)?)
}

// -------------------------------------------------------------------------
// inception_like: 3 stages of 2-4 inception blocks; a block splits into up
// to 4 paths of up to 4 operators (at least one conv, at most one
// supplementary op); channels are floor-divided across paths with the
// remainder assigned to the first, and Concat restores them.

fn gen_inception(rng: &mut ChaCha8Rng, name: &str) -> Result<ComputeGraph, FamilyError> {
    let c = STEM_CHANNELS;
    let s0 = TensorShape::new(32, 32, 3);
    let (mut b, input) = Builder::new(s0);
    let mut hw = 16usize;
    let mut s = TensorShape::new(hw, hw, c);
    let mut tip = b.add(conv(s0, s, 3), &[input]);
    tip = b.add(NodeAttrs::pointwise(OpKind::BatchNorm, s), &[tip]);
    tip = b.add(NodeAttrs::pointwise(OpKind::Relu, s), &[tip]);
    tip = b.marker(tip, s);
    for stage in 0..3 {
        if stage > 0 {
            let reduced = TensorShape::new(hw / 2, hw / 2, c);
            tip = b.add(NodeAttrs::pool(OpKind::MaxPool, s, reduced), &[tip]);
            hw /= 2;
            s = reduced;
        }
        for _ in 0..rng.gen_range(2..=4) {
            let paths = rng.gen_range(1..=4);
            let base = c / paths;
            let mut path_tips = Vec::with_capacity(paths);
            for p in 0..paths {
                let cp = if p == 0 { base + c % paths } else { base };
                let sp = TensorShape::new(hw, hw, cp);
                let mut pt = b.add(conv(s, sp, 1), &[tip]);
                let extra = rng.gen_range(0..=3);
                let mut supp_used = 0;
                for _ in 0..extra {
                    let op = loop {
                        let cand = ALL_BLOCK_OPS[rng.gen_range(0..ALL_BLOCK_OPS.len())];
                        if cand.is_conv() || supp_used == 0 {
                            break cand;
                        }
                    };
                    if !op.is_conv() {
                        supp_used += 1;
                    }
                    pt = b.add(op.attrs(sp), &[pt]);
                }
                path_tips.push(pt);
            }
            tip = b.add(NodeAttrs::concat(s), &path_tips);
            tip = b.marker(tip, s);
        }
    }
    Ok(b.head(tip, s, name)?)
}

// -------------------------------------------------------------------------
// twopath_like: two stem convolutions, then exactly two chain paths of 2-4
// blocks (1-3 operators each), merged by Concat.

fn gen_twopath(rng: &mut ChaCha8Rng, name: &str) -> Result<ComputeGraph, FamilyError> {
    let s0 = TensorShape::new(32, 32, 3);
    let s1 = TensorShape::new(16, 16, 8);
    let s2 = TensorShape::new(8, 8, STEM_CHANNELS);
    let half = TensorShape::new(8, 8, STEM_CHANNELS / 2);
    let (mut b, input) = Builder::new(s0);
    let stem1 = b.add(conv(s0, s1, 3), &[input]);
    let split = b.add(conv(s1, s2, 3), &[stem1]);
    let mut path_tips = Vec::with_capacity(2);
    for _ in 0..2 {
        let blocks = rng.gen_range(2..=4);
        let mut tip = split;
        for block in 0..blocks {
            let ops = rng.gen_range(1..=3);
            for op_i in 0..ops {
                if block == 0 && op_i == 0 {
                    tip = b.add(conv(s2, half, 1), &[tip]);
                } else {
                    let op = ALL_BLOCK_OPS[rng.gen_range(0..ALL_BLOCK_OPS.len())];
                    tip = b.add(op.attrs(half), &[tip]);
                }
            }
            tip = b.marker(tip, half);
        }
        path_tips.push(tip);
    }
    let merged = b.add(NodeAttrs::concat(s2), &path_tips);
    Ok(b.head(merged, s2, name)?)
}

// -------------------------------------------------------------------------
// public generation API

fn splitmix(seed: u64, i: u64) -> u64 {
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate `n` unique graphs of a family. Deterministic given the seed;
/// duplicates (by serialized form) are resampled.
pub fn generate(kind: FamilyKind, n: usize, seed: u64) -> Result<Vec<ComputeGraph>, FamilyError> {
    let mut out = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    let max_attempts = 100 * n.max(1);
    let mut attempt = 0usize;
    while out.len() < n {
        if attempt >= max_attempts {
            return Err(FamilyError::GenerationExhausted { wanted: n, attempts: attempt });
        }
        let name = format!("{}_{:05}", kind.tag(), out.len());
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, attempt as u64));
        attempt += 1;
        let cg = match kind {
            FamilyKind::Nb101Like => gen_nb101(&mut rng, &name),
            FamilyKind::HiamlLike => gen_hiaml(&mut rng, &name),
            FamilyKind::InceptionLike => gen_inception(&mut rng, &name),
            FamilyKind::TwopathLike => gen_twopath(&mut rng, &name),
        }?;
        // dedup on structure, ignoring the name
        let key = serialize(&cg.clone().with_name(""));
        if seen.insert(key) {
            out.push(cg);
        }
    }
    Ok(out)
}

// -------------------------------------------------------------------------
// structural counting helpers (for tests and predicates)

pub fn identity_markers(cg: &ComputeGraph) -> Vec<usize> {
    (0..cg.node_count()).filter(|&i| cg.nodes()[i].kind == OpKind::Identity).collect()
}

/// Node-kind sequences strictly between consecutive Identity markers, in
/// canonical order. With a stem marker plus one marker per block this
/// yields exactly the per-block operator runs.
pub fn marker_segments(cg: &ComputeGraph) -> Vec<Vec<OpKind>> {
    let markers = identity_markers(cg);
    markers
        .windows(2)
        .map(|w| {
            (w[0] + 1..w[1]).map(|i| cg.nodes()[i].kind).collect()
        })
        .collect()
}

/// nb101_like: number of cells (marker segments).
pub fn nb101_cell_count(cg: &ComputeGraph) -> usize {
    marker_segments(cg).len()
}

/// nb101_like: choice-op count per cell (a Conv-BN-ReLU triple counts as
/// one op, a max-pool as one).
pub fn nb101_cell_op_counts(cg: &ComputeGraph) -> Vec<usize> {
    marker_segments(cg)
        .iter()
        .map(|seg| {
            seg.iter().filter(|k| matches!(k, OpKind::Conv2d | OpKind::MaxPool)).count()
        })
        .collect()
}

/// hiaml_like: true when the 8 blocks form 4 stages of 2 identical blocks.
pub fn hiaml_stages_are_paired(cg: &ComputeGraph) -> bool {
    let blocks = marker_segments(cg);
    blocks.len() == 8 && blocks.chunks(2).all(|pair| pair[0] == pair[1])
}

/// inception_like: blocks per stage, where stages are identified by the
/// spatial resolution at each block marker.
pub fn inception_stage_block_counts(cg: &ComputeGraph) -> Vec<usize> {
    let markers = identity_markers(cg);
    let mut counts: Vec<(usize, usize)> = Vec::new(); // (height, blocks)
    for &m in markers.iter().skip(1) {
        let h = cg.nodes()[m].output_shape.height;
        match counts.last_mut() {
            Some((last_h, c)) if *last_h == h => *c += 1,
            _ => counts.push((h, 1)),
        }
    }
    counts.into_iter().map(|(_, c)| c).collect()
}

/// twopath_like: block count along each of the two paths between the
/// second stem convolution and the merging Concat.
pub fn twopath_block_counts(cg: &ComputeGraph) -> Option<Vec<usize>> {
    let split = (0..cg.node_count()).find(|&i| {
        cg.successors(i).len() == 2 && cg.nodes()[i].kind == OpKind::Conv2d
    })?;
    let mut counts = Vec::with_capacity(2);
    for start in cg.successors(split) {
        let mut cur = start;
        let mut blocks = 0;
        loop {
            if cg.nodes()[cur].kind == OpKind::Concat {
                break;
            }
            if cg.nodes()[cur].kind == OpKind::Identity {
                blocks += 1;
            }
            let next = cg.successors(cur);
            if next.len() != 1 {
                return None;
            }
            cur = next[0];
        }
        counts.push(blocks);
    }
    Some(counts)
}

// -------------------------------------------------------------------------
// synthetic accuracy oracle

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub w_depth: f64,
    pub w_log_flops: f64,
    pub w_lambda2: f64,
    /// One weight per OpKind, applied to the operator-mix histogram.
    pub w_opmix: Vec<f64>,
    pub bias: f64,
    pub noise_std: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let mut w_opmix = vec![0.0; OP_KIND_COUNT];
        w_opmix[OpKind::Conv2d.index()] = 1.5;
        w_opmix[OpKind::DepthwiseConv2d.index()] = 0.8;
        w_opmix[OpKind::MaxPool.index()] = -0.6;
        w_opmix[OpKind::Relu.index()] = 0.3;
        w_opmix[OpKind::Swish.index()] = 0.4;
        OracleConfig {
            w_depth: 0.3,
            w_log_flops: 1.0,
            w_lambda2: 0.5,
            w_opmix,
            bias: -1.0,
            noise_std: 0.1,
            lo: 0.80,
            hi: 0.9409,
            seed: 0,
        }
    }
}

/// Deterministic accuracy label in [lo, hi]: logistic squashing of a
/// weighted feature sum plus per-graph seeded Gaussian noise. The feature
/// set deliberately includes spectral structure so the encoder has signal
/// to learn.
pub fn oracle_accuracy(cg: &ComputeGraph, oracle: &OracleConfig) -> f64 {
    let depth_f = cg.depth() as f64 / 20.0;
    let flops = compute_flops(cg);
    let logf_f = (flops * 1e9 + 1.0).log10() / 10.0;
    let n = cg.node_count() as f64;
    let mut score = oracle.w_depth * depth_f + oracle.w_log_flops * logf_f + oracle.bias;
    for node in cg.nodes() {
        score += oracle.w_opmix[node.kind.index()] / n;
    }
    if oracle.w_lambda2 != 0.0 {
        let sig = crate::spectral::signature_q(cg, 2).expect("eigensolver converged");
        score += oracle.w_lambda2 * sig.eigenvalues[1];
    }
    if oracle.noise_std > 0.0 {
        let digest = Sha256::digest(serialize(cg));
        let h = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(oracle.seed ^ h);
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        score += oracle.noise_std * z;
    }
    let squashed = 1.0 / (1.0 + (-score).exp());
    oracle.lo + (oracle.hi - oracle.lo) * squashed
}

// -------------------------------------------------------------------------
// labeled datasets

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub graph: ComputeGraph,
    pub accuracy: f64,
    pub flops_g: f64,
}

pub fn build_dataset(
    kind: FamilyKind,
    n: usize,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<Vec<DatasetRecord>, FamilyError> {
    Ok(generate(kind, n, seed)?
        .into_iter()
        .map(|graph| {
            let accuracy = oracle_accuracy(&graph, oracle);
            let flops_g = compute_flops(&graph);
            DatasetRecord { graph, accuracy, flops_g }
        })
        .collect())
}

pub fn record_to_json(r: &DatasetRecord) -> serde_json::Value {
    serde_json::json!({
        "graph": crate::graph::to_json_value(&r.graph),
        "accuracy": r.accuracy,
        "flops_g": r.flops_g,
    })
}

pub fn record_from_json(v: &serde_json::Value) -> Result<DatasetRecord, String> {
    let graph = crate::graph::from_json_value(
        v.get("graph").ok_or("missing \"graph\"")?.clone(),
    )
    .map_err(|e| e.to_string())?;
    let accuracy = v.get("accuracy").and_then(|a| a.as_f64()).ok_or("missing \"accuracy\"")?;
    let flops_g = v.get("flops_g").and_then(|f| f.as_f64()).ok_or("missing \"flops_g\"")?;
    Ok(DatasetRecord { graph, accuracy, flops_g })
}

/// JSON-lines, one record per line; byte-stable for identical inputs.
pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<(), FamilyError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, &record_to_json(r)).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, FamilyError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| FamilyError::Parse { line: i + 1, reason: e.to_string() })?;
        out.push(
            record_from_json(&v).map_err(|reason| FamilyError::Parse { line: i + 1, reason })?,
        );
    }
    Ok(out)
}
