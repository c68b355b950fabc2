//! Computation-graph intermediate representation.
//!
//! A `ComputeGraph` is a DAG of atomic operator nodes (convolutions,
//! activations, pooling, tensor ops) with height-width-channel shape
//! annotations and directed, featureless edges. It is the common encoding
//! for architectures from any family, plus FLOPs accounting and a JSON
//! serialization used by the dataset files.

use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("CycleError: edges do not form a DAG")]
    Cycle,
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("TopologyError: {0}")]
    Topology(String),
    #[error("ParseError at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("ValidationError: {0}")]
    Validation(String),
}

/// Atomic operator vocabulary. Closed enumeration; extending it requires a
/// schema version bump in the JSON format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Output,
    Conv2d,
    DepthwiseConv2d,
    Linear,
    BatchNorm,
    Relu,
    Swish,
    Sigmoid,
    Tanh,
    MaxPool,
    AvgPool,
    GlobalAvgPool,
    Add,
    Concat,
    Mean,
    Identity,
}

pub const OP_KIND_COUNT: usize = 17;

impl OpKind {
    pub const ALL: [OpKind; OP_KIND_COUNT] = [
        OpKind::Input,
        OpKind::Output,
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::Linear,
        OpKind::BatchNorm,
        OpKind::Relu,
        OpKind::Swish,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::MaxPool,
        OpKind::AvgPool,
        OpKind::GlobalAvgPool,
        OpKind::Add,
        OpKind::Concat,
        OpKind::Mean,
        OpKind::Identity,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Kinds that carry a trainable weight tensor.
    pub fn has_weights(self) -> bool {
        matches!(self, OpKind::Conv2d | OpKind::DepthwiseConv2d | OpKind::Linear)
    }
}

/// Height-width-channel tensor shape; all dimensions at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TensorShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        TensorShape { height, width, channels }
    }

    pub fn elements(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.channels as u64
    }

    fn check(&self) -> Result<(), GraphError> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(GraphError::ShapeMismatch(format!(
                "dimensions must be >= 1, got {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        Ok(())
    }
}

/// Per-node features: operator kind, input/output shapes, optional weight
/// tensor dimensions and a bias flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttrs {
    pub kind: OpKind,
    pub input_shape: TensorShape,
    pub output_shape: TensorShape,
    pub weight_shape: Option<Vec<usize>>,
    pub has_bias: bool,
}

impl NodeAttrs {
    /// Node whose output shape equals its input shape and which carries no
    /// weights (activations, add, mean, identity, batch_norm, input, output).
    pub fn pointwise(kind: OpKind, shape: TensorShape) -> Self {
        NodeAttrs {
            kind,
            input_shape: shape,
            output_shape: shape,
            weight_shape: None,
            has_bias: false,
        }
    }

    pub fn conv2d(kh: usize, kw: usize, input: TensorShape, output: TensorShape, bias: bool) -> Self {
        NodeAttrs {
            kind: OpKind::Conv2d,
            input_shape: input,
            output_shape: output,
            weight_shape: Some(vec![kh, kw, input.channels, output.channels]),
            has_bias: bias,
        }
    }

    pub fn depthwise(kh: usize, kw: usize, input: TensorShape, output: TensorShape, bias: bool) -> Self {
        NodeAttrs {
            kind: OpKind::DepthwiseConv2d,
            input_shape: input,
            output_shape: output,
            weight_shape: Some(vec![kh, kw, input.channels]),
            has_bias: bias,
        }
    }

    pub fn linear(d_in: usize, d_out: usize, bias: bool) -> Self {
        NodeAttrs {
            kind: OpKind::Linear,
            input_shape: TensorShape::new(1, 1, d_in),
            output_shape: TensorShape::new(1, 1, d_out),
            weight_shape: Some(vec![d_in, d_out]),
            has_bias: bias,
        }
    }

    pub fn pool(kind: OpKind, input: TensorShape, output: TensorShape) -> Self {
        NodeAttrs {
            kind,
            input_shape: input,
            output_shape: output,
            weight_shape: None,
            has_bias: false,
        }
    }

    pub fn global_avg_pool(input: TensorShape) -> Self {
        NodeAttrs {
            kind: OpKind::GlobalAvgPool,
            input_shape: input,
            output_shape: TensorShape::new(1, 1, input.channels),
            weight_shape: None,
            has_bias: false,
        }
    }

    pub fn concat(shape: TensorShape) -> Self {
        NodeAttrs {
            kind: OpKind::Concat,
            input_shape: shape,
            output_shape: shape,
            weight_shape: None,
            has_bias: false,
        }
    }

    fn weight_elements(&self) -> u64 {
        self.weight_shape
            .as_ref()
            .map(|w| w.iter().map(|&d| d as u64).product())
            .unwrap_or(0)
    }
}

/// Validated computation graph. Nodes are stored in canonical topological
/// order (stable tie-break by original index), so structural equality and
/// the serialization round trip are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputeGraph {
    nodes: Vec<NodeAttrs>,
    edges: Vec<(usize, usize)>,
    name: String,
}

impl ComputeGraph {
    pub fn nodes(&self) -> &[NodeAttrs] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn predecessors(&self, idx: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, d)| d == idx).map(|&(s, _)| s).collect()
    }

    pub fn successors(&self, idx: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(s, _)| s == idx).map(|&(_, d)| d).collect()
    }

    /// Length (in edges) of the longest input-to-output path.
    pub fn depth(&self) -> usize {
        let n = self.nodes.len();
        let mut dist = vec![0usize; n];
        // nodes are topologically ordered
        for &(s, d) in &self.edges {
            dist[d] = dist[d].max(dist[s] + 1);
        }
        dist.into_iter().max().unwrap_or(0)
    }
}

/// Build and fully validate a graph. Nodes are reordered into canonical
/// topological order before any invariant is checked against indices.
pub fn build_graph(
    nodes: Vec<NodeAttrs>,
    edges: Vec<(usize, usize)>,
    name: impl Into<String>,
) -> Result<ComputeGraph, GraphError> {
    let n = nodes.len();
    if n == 0 {
        return Err(GraphError::Topology("node list is empty".into()));
    }
    for &(s, d) in &edges {
        if s >= n || d >= n {
            return Err(GraphError::Topology(format!("edge ({s},{d}) out of range for {n} nodes")));
        }
    }

    let order = topo_order(n, &edges)?;
    // remap to canonical order
    let mut pos = vec![0usize; n];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        pos[old_idx] = new_idx;
    }
    let nodes: Vec<NodeAttrs> = order.iter().map(|&i| nodes[i].clone()).collect();
    let mut edges: Vec<(usize, usize)> = edges.iter().map(|&(s, d)| (pos[s], pos[d])).collect();
    edges.sort_unstable();
    edges.dedup();

    let cg = ComputeGraph { nodes, edges, name: name.into() };
    validate(&cg)?;
    Ok(cg)
}

// Kahn's algorithm with smallest-original-index tie-break.
fn topo_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, GraphError> {
    let mut indeg = vec![0usize; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen = std::collections::HashSet::new();
    for &(s, d) in edges {
        if !seen.insert((s, d)) {
            continue;
        }
        indeg[d] += 1;
        adj[s].push(d);
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(i)) = ready.pop() {
        order.push(i);
        for &d in &adj[i] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.push(std::cmp::Reverse(d));
            }
        }
    }
    if order.len() != n {
        return Err(GraphError::Cycle);
    }
    Ok(order)
}

fn validate(cg: &ComputeGraph) -> Result<(), GraphError> {
    let n = cg.nodes.len();
    for (i, node) in cg.nodes.iter().enumerate() {
        node.input_shape.check()?;
        node.output_shape.check()?;
        validate_node(i, node)?;
    }

    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for &(s, d) in &cg.edges {
        outdeg[s] += 1;
        indeg[d] += 1;
    }

    let inputs: Vec<usize> = (0..n).filter(|&i| cg.nodes[i].kind == OpKind::Input).collect();
    let outputs: Vec<usize> = (0..n).filter(|&i| cg.nodes[i].kind == OpKind::Output).collect();
    if inputs.len() != 1 {
        return Err(GraphError::Topology(format!("expected exactly 1 input node, found {}", inputs.len())));
    }
    if outputs.len() != 1 {
        return Err(GraphError::Topology(format!("expected exactly 1 output node, found {}", outputs.len())));
    }
    let input = inputs[0];
    let output = outputs[0];
    if indeg[input] != 0 {
        return Err(GraphError::Topology("input node has incoming edges".into()));
    }
    if outdeg[output] != 0 {
        return Err(GraphError::Topology("output node has outgoing edges".into()));
    }
    if n > 1 && (outdeg[input] == 0 || indeg[output] == 0) {
        return Err(GraphError::Topology("input/output node is disconnected".into()));
    }

    // every node on a path input -> output
    let fwd = reachable_from(n, &cg.edges, input, false);
    let bwd = reachable_from(n, &cg.edges, output, true);
    for i in 0..n {
        if n == 1 {
            break;
        }
        if !fwd[i] || !bwd[i] {
            return Err(GraphError::Topology(format!("node {i} is not on an input-to-output path")));
        }
    }

    // edge shape rules: equality everywhere except concat, whose input
    // channels are the sum of its predecessors' output channels
    for &(s, d) in &cg.edges {
        let src = &cg.nodes[s];
        let dst = &cg.nodes[d];
        if dst.kind == OpKind::Concat {
            if src.output_shape.height != dst.input_shape.height
                || src.output_shape.width != dst.input_shape.width
                || src.output_shape.channels > dst.input_shape.channels
            {
                return Err(GraphError::ShapeMismatch(format!(
                    "edge ({s},{d}): {:?} not consumable by concat input {:?}",
                    src.output_shape, dst.input_shape
                )));
            }
        } else if src.output_shape != dst.input_shape {
            return Err(GraphError::ShapeMismatch(format!(
                "edge ({s},{d}): src output {:?} != dst input {:?}",
                src.output_shape, dst.input_shape
            )));
        }
    }
    for d in 0..n {
        if cg.nodes[d].kind == OpKind::Concat {
            let total: usize = cg
                .predecessors(d)
                .iter()
                .map(|&s| cg.nodes[s].output_shape.channels)
                .sum();
            if total != cg.nodes[d].input_shape.channels {
                return Err(GraphError::ShapeMismatch(format!(
                    "concat node {d}: predecessor channels sum to {total}, input declares {}",
                    cg.nodes[d].input_shape.channels
                )));
            }
        }
    }
    Ok(())
}

fn validate_node(i: usize, node: &NodeAttrs) -> Result<(), GraphError> {
    let ins = node.input_shape;
    let out = node.output_shape;
    if node.weight_shape.is_some() != node.kind.has_weights() {
        return Err(GraphError::ShapeMismatch(format!(
            "node {i} ({:?}): weight_shape present iff kind is conv2d/depthwise/linear",
            node.kind
        )));
    }
    if node.has_bias && node.weight_shape.is_none() {
        return Err(GraphError::ShapeMismatch(format!("node {i}: has_bias without weights")));
    }
    let err = |msg: String| Err(GraphError::ShapeMismatch(format!("node {i} ({:?}): {msg}", node.kind)));
    match node.kind {
        OpKind::Input
        | OpKind::Output
        | OpKind::BatchNorm
        | OpKind::Relu
        | OpKind::Swish
        | OpKind::Sigmoid
        | OpKind::Tanh
        | OpKind::Add
        | OpKind::Mean
        | OpKind::Identity
        | OpKind::Concat => {
            if ins != out {
                return err("output shape must equal input shape".into());
            }
        }
        OpKind::Conv2d => {
            let w = node.weight_shape.as_ref().unwrap();
            if w.len() != 4 || w.iter().any(|&d| d == 0) {
                return err(format!("conv2d weight must be [kh,kw,cin,cout], got {w:?}"));
            }
            if w[2] != ins.channels || w[3] != out.channels {
                return err(format!("conv2d weight channels {:?} inconsistent with shapes", w));
            }
            if out.height > ins.height || out.width > ins.width {
                return err("conv2d cannot increase spatial size".into());
            }
        }
        OpKind::DepthwiseConv2d => {
            let w = node.weight_shape.as_ref().unwrap();
            if w.len() != 3 || w.iter().any(|&d| d == 0) {
                return err(format!("depthwise weight must be [kh,kw,c], got {w:?}"));
            }
            if w[2] != ins.channels || ins.channels != out.channels {
                return err("depthwise channels must match input and output".into());
            }
            if out.height > ins.height || out.width > ins.width {
                return err("depthwise conv cannot increase spatial size".into());
            }
        }
        OpKind::Linear => {
            let w = node.weight_shape.as_ref().unwrap();
            if w.len() != 2 || w.iter().any(|&d| d == 0) {
                return err(format!("linear weight must be [in,out], got {w:?}"));
            }
            if ins.height != 1 || ins.width != 1 || out.height != 1 || out.width != 1 {
                return err("linear operates on 1x1xC tensors".into());
            }
            if w[0] != ins.channels || w[1] != out.channels {
                return err("linear weight dims inconsistent with shapes".into());
            }
        }
        OpKind::MaxPool | OpKind::AvgPool => {
            if out.channels != ins.channels {
                return err("pooling preserves channels".into());
            }
            if out.height > ins.height || out.width > ins.width {
                return err("pooling cannot increase spatial size".into());
            }
        }
        OpKind::GlobalAvgPool => {
            if out.height != 1 || out.width != 1 || out.channels != ins.channels {
                return err("global_avg_pool output must be 1x1xC".into());
            }
        }
    }
    Ok(())
}

fn reachable_from(n: usize, edges: &[(usize, usize)], start: usize, reverse: bool) -> Vec<bool> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in edges {
        if reverse {
            adj[d].push(s);
        } else {
            adj[s].push(d);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Total FLOPs of a forward pass, in gigaFLOPs. Multiply-add counts as two
/// operations; the per-kind formulas are fixed so results are bit-stable.
pub fn compute_flops(cg: &ComputeGraph) -> f64 {
    let mut total: u64 = 0;
    for node in &cg.nodes {
        let out_elems = node.output_shape.elements();
        total += match node.kind {
            OpKind::Conv2d | OpKind::DepthwiseConv2d | OpKind::Linear => {
                let w = node.weight_elements();
                let per_out = match node.kind {
                    // weight elems already include cin (or c); spatial reuse
                    // multiplies by output positions
                    OpKind::Conv2d => {
                        let ws = node.weight_shape.as_ref().unwrap();
                        2 * (ws[0] * ws[1] * ws[2] * ws[3]) as u64
                            * (node.output_shape.height * node.output_shape.width) as u64
                    }
                    OpKind::DepthwiseConv2d => {
                        let ws = node.weight_shape.as_ref().unwrap();
                        2 * (ws[0] * ws[1] * ws[2]) as u64
                            * (node.output_shape.height * node.output_shape.width) as u64
                    }
                    OpKind::Linear => 2 * w,
                    _ => unreachable!(),
                };
                per_out + if node.has_bias { out_elems } else { 0 }
            }
            OpKind::BatchNorm
            | OpKind::Relu
            | OpKind::Swish
            | OpKind::Sigmoid
            | OpKind::Tanh
            | OpKind::Add
            | OpKind::Mean
            | OpKind::MaxPool
            | OpKind::AvgPool
            | OpKind::GlobalAvgPool => out_elems,
            OpKind::Concat | OpKind::Identity | OpKind::Input | OpKind::Output => 0,
        };
    }
    total as f64 / 1e9
}

/// Symmetric 0/1 adjacency of the undirected skeleton; zero diagonal.
pub fn undirected_adjacency(cg: &ComputeGraph) -> Matrix {
    let n = cg.node_count();
    let mut a = Matrix::zeros(n, n);
    for &(s, d) in cg.edges() {
        if s != d {
            a.set(s, d, 1.0);
            a.set(d, s, 1.0);
        }
    }
    a
}

// --- JSON schema ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeJson {
    kind: OpKind,
    #[serde(rename = "in")]
    input: [usize; 3],
    out: [usize; 3],
    weight: Option<Vec<usize>>,
    bias: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    name: String,
    nodes: Vec<NodeJson>,
    edges: Vec<[usize; 2]>,
}

impl From<&ComputeGraph> for GraphJson {
    fn from(cg: &ComputeGraph) -> Self {
        GraphJson {
            name: cg.name.clone(),
            nodes: cg
                .nodes
                .iter()
                .map(|n| NodeJson {
                    kind: n.kind,
                    input: [n.input_shape.height, n.input_shape.width, n.input_shape.channels],
                    out: [n.output_shape.height, n.output_shape.width, n.output_shape.channels],
                    weight: n.weight_shape.clone(),
                    bias: n.has_bias,
                })
                .collect(),
            edges: cg.edges.iter().map(|&(s, d)| [s, d]).collect(),
        }
    }
}

pub fn to_json_value(cg: &ComputeGraph) -> serde_json::Value {
    serde_json::to_value(GraphJson::from(cg)).expect("graph serialization cannot fail")
}

pub fn serialize(cg: &ComputeGraph) -> Vec<u8> {
    serde_json::to_vec(&GraphJson::from(cg)).expect("graph serialization cannot fail")
}

pub fn from_json_value(v: serde_json::Value) -> Result<ComputeGraph, GraphError> {
    let gj: GraphJson = serde_json::from_value(v).map_err(|e| GraphError::Parse {
        offset: 0,
        reason: e.to_string(),
    })?;
    graph_from_json(gj)
}

pub fn deserialize(bytes: &[u8]) -> Result<ComputeGraph, GraphError> {
    let gj: GraphJson = serde_json::from_slice(bytes).map_err(|e| GraphError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        reason: e.to_string(),
    })?;
    graph_from_json(gj)
}

fn graph_from_json(gj: GraphJson) -> Result<ComputeGraph, GraphError> {
    let nodes: Vec<NodeAttrs> = gj
        .nodes
        .into_iter()
        .map(|n| NodeAttrs {
            kind: n.kind,
            input_shape: TensorShape::new(n.input[0], n.input[1], n.input[2]),
            output_shape: TensorShape::new(n.out[0], n.out[1], n.out[2]),
            weight_shape: n.weight,
            has_bias: n.bias,
        })
        .collect();
    let edges = gj.edges.into_iter().map(|[s, d]| (s, d)).collect();
    // re-validate; a decoded graph gets no trust
    build_graph(nodes, edges, gj.name).map_err(|e| match e {
        GraphError::Parse { .. } => e,
        other => GraphError::Validation(other.to_string()),
    })
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current_line = 1usize;
    let mut offset = 0usize;
    for (i, &b) in bytes.iter().enumerate() {
        if current_line == line {
            offset = i;
            break;
        }
        if b == b'\n' {
            current_line += 1;
            offset = i + 1;
        }
    }
    offset + column.saturating_sub(1)
}

/// Small fixed pipeline used across the crate's tests.
#[cfg(test)]
pub(crate) fn chain_graph(name: &str) -> ComputeGraph {
    // input(8,8,3) -> conv2d 3x3 -> relu -> gap -> linear 16->10 -> output
    let s_in = TensorShape::new(8, 8, 3);
    let s_mid = TensorShape::new(8, 8, 16);
    let nodes = vec![
        NodeAttrs::pointwise(OpKind::Input, s_in),
        NodeAttrs::conv2d(3, 3, s_in, s_mid, false),
        NodeAttrs::pointwise(OpKind::Relu, s_mid),
        NodeAttrs::global_avg_pool(s_mid),
        NodeAttrs::linear(16, 10, true),
        NodeAttrs::pointwise(OpKind::Output, TensorShape::new(1, 1, 10)),
    ];
    let edges = vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)];
    build_graph(nodes, edges, name).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_node_chain_is_valid() {
        let cg = chain_graph("chain");
        assert_eq!(cg.node_count(), 6);
        assert_eq!(cg.depth(), 5);
    }

    #[test]
    fn two_node_identity_graph() {
        let s = TensorShape::new(4, 4, 2);
        let cg = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1)],
            "id",
        )
        .unwrap();
        assert_eq!(cg.node_count(), 2);
    }

    #[test]
    fn cycle_is_rejected() {
        let s = TensorShape::new(4, 4, 2);
        let err = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1), (1, 0)],
            "cyc",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Cycle));
    }

    #[test]
    fn shape_mismatch_on_edge_rejected() {
        let err = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, TensorShape::new(4, 4, 2)),
                NodeAttrs::pointwise(OpKind::Output, TensorShape::new(4, 4, 3)),
            ],
            vec![(0, 1)],
            "bad",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::ShapeMismatch(_)));
    }

    #[test]
    fn unreachable_node_rejected() {
        let s = TensorShape::new(4, 4, 2);
        let err = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Output, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
            ],
            vec![(0, 1)],
            "orphan",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Topology(_)));
    }

    #[test]
    fn missing_input_rejected() {
        let s = TensorShape::new(4, 4, 2);
        let err = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1)],
            "noin",
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Topology(_)));
    }

    #[test]
    fn conv_flops_hand_value() {
        let s_in = TensorShape::new(32, 32, 16);
        let cg = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s_in),
                NodeAttrs::conv2d(3, 3, s_in, s_in, false),
                NodeAttrs::pointwise(OpKind::Output, s_in),
            ],
            vec![(0, 1), (1, 2)],
            "conv",
        )
        .unwrap();
        // 2*3*3*16*16*32*32 = 4_718_592
        assert_eq!(compute_flops(&cg), 4_718_592.0 / 1e9);
    }

    #[test]
    fn relu_flops_one_per_element() {
        let s = TensorShape::new(8, 8, 4);
        let cg = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1), (1, 2)],
            "relu",
        )
        .unwrap();
        assert_eq!(compute_flops(&cg), 256.0 / 1e9);
    }

    #[test]
    fn input_output_only_has_zero_flops() {
        let s = TensorShape::new(4, 4, 2);
        let cg = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1)],
            "empty",
        )
        .unwrap();
        assert_eq!(compute_flops(&cg), 0.0);
    }

    #[test]
    fn flops_additive_over_composition() {
        let s = TensorShape::new(8, 8, 4);
        let part = |name: &str| {
            build_graph(
                vec![
                    NodeAttrs::pointwise(OpKind::Input, s),
                    NodeAttrs::pointwise(OpKind::Relu, s),
                    NodeAttrs::pointwise(OpKind::Output, s),
                ],
                vec![(0, 1), (1, 2)],
                name,
            )
            .unwrap()
        };
        let joined = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1), (1, 2), (2, 3)],
            "joined",
        )
        .unwrap();
        let a = compute_flops(&part("a"));
        let b = compute_flops(&part("b"));
        assert!((compute_flops(&joined) - (a + b)).abs() < 1e-18);
    }

    #[test]
    fn adjacency_chain_and_parallel_edges() {
        let s = TensorShape::new(4, 4, 2);
        let cg = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1), (1, 2)],
            "p3",
        )
        .unwrap();
        let a = undirected_adjacency(&cg);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(a.get(1, 2), 1.0);
        assert_eq!(a.get(2, 1), 1.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(0, 0), 0.0);
    }

    #[test]
    fn serialization_round_trip() {
        let cg = chain_graph("chain");
        let bytes = serialize(&cg);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(cg, back);
    }

    #[test]
    fn truncated_bytes_parse_error() {
        let cg = chain_graph("chain");
        let bytes = serialize(&cg);
        let err = deserialize(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, GraphError::Parse { .. }));
    }

    #[test]
    fn cyclic_json_fixture_is_validation_error() {
        let json = r#"{"name":"cyc","nodes":[
            {"kind":"input","in":[4,4,2],"out":[4,4,2],"weight":null,"bias":false},
            {"kind":"output","in":[4,4,2],"out":[4,4,2],"weight":null,"bias":false}],
            "edges":[[0,1],[1,0]]}"#;
        let err = deserialize(json.as_bytes()).unwrap_err();
        assert!(matches!(err, GraphError::Validation(_)));
    }

    #[test]
    fn concat_channel_sum_enforced() {
        let s = TensorShape::new(4, 4, 2);
        let cat = TensorShape::new(4, 4, 4);
        let nodes = vec![
            NodeAttrs::pointwise(OpKind::Input, s),
            NodeAttrs::pointwise(OpKind::Relu, s),
            NodeAttrs::pointwise(OpKind::Tanh, s),
            NodeAttrs::concat(cat),
            NodeAttrs::pointwise(OpKind::Output, cat),
        ];
        let edges = vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)];
        assert!(build_graph(nodes.clone(), edges.clone(), "ok").is_ok());

        // wrong declared channel sum
        let mut bad_nodes = nodes;
        bad_nodes[3] = NodeAttrs::concat(TensorShape::new(4, 4, 5));
        bad_nodes[4] = NodeAttrs::pointwise(OpKind::Output, TensorShape::new(4, 4, 5));
        let err = build_graph(bad_nodes, edges, "bad").unwrap_err();
        assert!(matches!(err, GraphError::ShapeMismatch(_)));
    }

    #[test]
    fn canonical_order_ignores_input_permutation() {
        let s = TensorShape::new(4, 4, 2);
        let a = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
                NodeAttrs::pointwise(OpKind::Output, s),
            ],
            vec![(0, 1), (1, 2)],
            "g",
        )
        .unwrap();
        let b = build_graph(
            vec![
                NodeAttrs::pointwise(OpKind::Output, s),
                NodeAttrs::pointwise(OpKind::Input, s),
                NodeAttrs::pointwise(OpKind::Relu, s),
            ],
            vec![(1, 2), (2, 0)],
            "g",
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
