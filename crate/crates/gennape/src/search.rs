//! Mutation-based local search over computation graphs driven by any
//! scoring function.

use crate::graph::{
    build_graph, compute_flops, serialize, ComputeGraph, NodeAttrs, OpKind, TensorShape,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("EmptyFrontier: seed graph FLOPs {seed} exceed budget {budget}")]
    EmptyFrontier { seed: f64, budget: f64 },
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub iterations: usize,
    pub top_k: usize,
    pub mutations_per_parent: usize,
    pub flops_budget: Option<f64>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { iterations: 6, top_k: 8, mutations_per_parent: 16, flops_budget: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub graph: ComputeGraph,
    pub predicted: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryEntry {
    pub iter: usize,
    pub name: String,
    pub score: f64,
    pub flops_g: f64,
    pub kept: bool,
}

const MUTATE_ATTEMPTS: usize = 20;

// shape-preserving replacement vocabulary
fn preserving_op(rng: &mut ChaCha8Rng, s: TensorShape) -> NodeAttrs {
    match rng.gen_range(0..10) {
        0 => NodeAttrs::conv2d(3, 3, s, s, false),
        1 => NodeAttrs::conv2d(1, 1, s, s, false),
        2 => NodeAttrs::depthwise(3, 3, s, s, false),
        3 => NodeAttrs::pointwise(OpKind::BatchNorm, s),
        4 => NodeAttrs::pointwise(OpKind::Relu, s),
        5 => NodeAttrs::pointwise(OpKind::Swish, s),
        6 => NodeAttrs::pointwise(OpKind::Tanh, s),
        7 => NodeAttrs::pointwise(OpKind::Sigmoid, s),
        8 => NodeAttrs::pool(OpKind::MaxPool, s, s),
        _ => NodeAttrs::pool(OpKind::AvgPool, s, s),
    }
}

// a single operator that maps s_in to a different s_out, when feasible
fn converting_op(rng: &mut ChaCha8Rng, s_in: TensorShape, s_out: TensorShape) -> Option<NodeAttrs> {
    if s_out.height > s_in.height || s_out.width > s_in.width {
        return None;
    }
    let mut options: Vec<NodeAttrs> = Vec::new();
    options.push(NodeAttrs::conv2d(3, 3, s_in, s_out, false));
    options.push(NodeAttrs::conv2d(1, 1, s_in, s_out, false));
    if s_out.channels == s_in.channels {
        options.push(NodeAttrs::pool(OpKind::MaxPool, s_in, s_out));
        options.push(NodeAttrs::pool(OpKind::AvgPool, s_in, s_out));
        if s_out.height == 1 && s_out.width == 1 {
            options.push(NodeAttrs::global_avg_pool(s_in));
        }
    }
    if s_in.height == 1 && s_in.width == 1 && s_out.height == 1 && s_out.width == 1 {
        options.push(NodeAttrs::linear(s_in.channels, s_out.channels, false));
    }
    Some(options[rng.gen_range(0..options.len())].clone())
}

// sample a 1-3 operator chain taking s_in to s_out
fn sample_chain(rng: &mut ChaCha8Rng, s_in: TensorShape, s_out: TensorShape) -> Option<Vec<NodeAttrs>> {
    let len = rng.gen_range(1..=3);
    if s_in == s_out {
        return Some((0..len).map(|_| preserving_op(rng, s_in)).collect());
    }
    let convert_at = rng.gen_range(0..len);
    let mut chain = Vec::with_capacity(len);
    for i in 0..len {
        if i == convert_at {
            chain.push(converting_op(rng, s_in, s_out)?);
        } else if i < convert_at {
            chain.push(preserving_op(rng, s_in));
        } else {
            chain.push(preserving_op(rng, s_out));
        }
    }
    Some(chain)
}

/// Replace a contiguous single-in/single-out run of 1-3 operator nodes
/// (never input/output) with a freshly sampled shape-compatible chain.
/// Falls back to returning the graph unchanged after 20 infeasible
/// attempts.
pub fn mutate(cg: &ComputeGraph, rng: &mut ChaCha8Rng) -> ComputeGraph {
    let n = cg.node_count();
    let eligible: Vec<usize> = (0..n)
        .filter(|&i| {
            let k = cg.nodes()[i].kind;
            k != OpKind::Input
                && k != OpKind::Output
                && cg.predecessors(i).len() == 1
                && cg.successors(i).len() == 1
        })
        .collect();
    if eligible.is_empty() {
        return cg.clone();
    }
    for _ in 0..MUTATE_ATTEMPTS {
        let start = eligible[rng.gen_range(0..eligible.len())];
        let want = rng.gen_range(1..=3);
        let mut path = vec![start];
        while path.len() < want {
            let next = cg.successors(*path.last().unwrap())[0];
            if !eligible.contains(&next) {
                break;
            }
            path.push(next);
        }
        let s_in = cg.nodes()[path[0]].input_shape;
        let s_out = cg.nodes()[*path.last().unwrap()].output_shape;
        let chain = match sample_chain(rng, s_in, s_out) {
            Some(c) => c,
            None => continue,
        };
        let pred = cg.predecessors(path[0])[0];
        let succ = cg.successors(*path.last().unwrap())[0];
        let removed: HashSet<usize> = path.iter().copied().collect();

        let mut nodes = Vec::with_capacity(n - path.len() + chain.len());
        let mut remap = vec![usize::MAX; n];
        for i in 0..n {
            if !removed.contains(&i) {
                remap[i] = nodes.len();
                nodes.push(cg.nodes()[i].clone());
            }
        }
        let mut edges: Vec<(usize, usize)> = cg
            .edges()
            .iter()
            .filter(|(s, d)| !removed.contains(s) && !removed.contains(d))
            .map(|&(s, d)| (remap[s], remap[d]))
            .collect();
        let mut prev = remap[pred];
        for attrs in chain {
            let idx = nodes.len();
            nodes.push(attrs);
            edges.push((prev, idx));
            prev = idx;
        }
        edges.push((prev, remap[succ]));
        if let Ok(mutant) = build_graph(nodes, edges, cg.name()) {
            return mutant;
        }
    }
    cg.clone()
}

/// Elitist local search: in every iteration each frontier member spawns
/// `mutations_per_parent` mutants; parents and children compete for the
/// `top_k` slots by predicted score (FLOPs breaks ties, lower first). With
/// a FLOPs budget, over-budget candidates are logged but never kept.
pub fn local_search<F>(
    seed_cg: &ComputeGraph,
    mut predictor: F,
    config: &SearchConfig,
) -> Result<(Candidate, Vec<TrajectoryEntry>), SearchError>
where
    F: FnMut(&ComputeGraph) -> f64,
{
    let seed_flops = compute_flops(seed_cg);
    if let Some(budget) = config.flops_budget {
        if seed_flops > budget {
            return Err(SearchError::EmptyFrontier { seed: seed_flops, budget });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seed_candidate =
        Candidate { graph: seed_cg.clone(), predicted: predictor(seed_cg), flops: seed_flops };
    let mut trajectory = vec![TrajectoryEntry {
        iter: 0,
        name: seed_cg.name().to_string(),
        score: seed_candidate.predicted,
        flops_g: seed_candidate.flops,
        kept: true,
    }];
    let mut frontier = vec![seed_candidate];
    let mut seen: HashSet<Vec<u8>> =
        frontier.iter().map(|c| serialize(&c.graph.clone().with_name(""))).collect();

    for iter in 1..=config.iterations {
        let mut pool = frontier.clone();
        let mut entries = Vec::new();
        for (p, parent) in frontier.iter().enumerate() {
            for c in 0..config.mutations_per_parent {
                let name = format!("{}-i{iter}p{p}m{c}", seed_cg.name());
                let graph = mutate(&parent.graph, &mut rng).with_name(name.clone());
                let flops = compute_flops(&graph);
                let predicted = predictor(&graph);
                let within = config.flops_budget.map(|b| flops <= b).unwrap_or(true);
                let fresh = seen.insert(serialize(&graph.clone().with_name("")));
                if within && fresh {
                    pool.push(Candidate { graph, predicted, flops });
                }
                entries.push((name, predicted, flops));
            }
        }
        pool.sort_by(|a, b| {
            b.predicted
                .partial_cmp(&a.predicted)
                .unwrap()
                .then(a.flops.partial_cmp(&b.flops).unwrap())
                .then(a.graph.name().cmp(b.graph.name()))
        });
        pool.truncate(config.top_k);
        frontier = pool;
        let kept_names: HashSet<&str> = frontier.iter().map(|c| c.graph.name()).collect();
        for (name, score, flops_g) in entries {
            let kept = kept_names.contains(name.as_str());
            trajectory.push(TrajectoryEntry { iter, name, score, flops_g, kept });
        }
    }
    Ok((frontier[0].clone(), trajectory))
}

/// JSON-lines trajectory log.
pub fn write_trajectory(
    path: impl AsRef<std::path::Path>,
    trajectory: &[TrajectoryEntry],
) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in trajectory {
        serde_json::to_writer(&mut f, e).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
