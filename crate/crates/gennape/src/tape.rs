//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A `Tape` records primitive operations (matmul, elementwise nonlinearity,
//! softmax, normalization, pooling, concatenation) in forward order and
//! replays them in reverse to accumulate gradients. Values are immutable
//! once recorded; `backward` returns a separate gradient store.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Tensor { rows: 1, cols, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() needs a 1x1 tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let drow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in drow.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    fn add_in_place(&mut self, other: &Tensor) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Transpose(VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    MulElem(VarId, VarId),
    AddRowBroadcast(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    SoftmaxRows(VarId),
    LogSumExpRows(VarId),
    MeanRows(VarId),
    ConcatCols(VarId, VarId),
    ConcatRows(Vec<VarId>),
    SliceCols(VarId, usize, usize),
    L2NormalizeRows(VarId),
    SumAll(VarId),
    MulConst(VarId, Tensor),
    AddConst(VarId),
}

struct TapeNode {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<TapeNode>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given variable; zero if the variable
    /// did not participate or does not require grad.
    pub fn get(&self, id: VarId, tape: &Tape) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let v = tape.value(id);
                Tensor::zeros(v.rows, v.cols)
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> VarId {
        self.nodes.push(TapeNode { value, op, requires_grad });
        VarId(self.nodes.len() - 1)
    }

    fn rg(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> VarId {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.leaf(t, false)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let mut v = va.clone();
        v.add_in_place(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul_elem(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MulElem(a, b), rg)
    }

    /// Add a 1 x c bias row to every row of an n x c matrix.
    pub fn add_row_broadcast(&mut self, a: VarId, bias: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        assert_eq!(va.cols, vb.cols, "bias width mismatch");
        let mut v = va.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += vb.data[j];
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(v, Op::AddRowBroadcast(a, bias), rg)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let va = self.value(a);
        let data = va.data.iter().map(|x| x * c).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> VarId {
        let va = self.value(a);
        let data = va.data.iter().map(|x| x + c).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let data = va.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let data = va.data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let data = va.data.iter().map(|&x| x.tanh()).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let mut v = Tensor::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = &va.data[i * va.cols..(i + 1) * va.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..va.cols {
                v.data[i * va.cols + j] = exps[j] / sum;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise log-sum-exp with max subtraction; output is n x 1.
    pub fn logsumexp_rows(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let mut v = Tensor::zeros(va.rows, 1);
        for i in 0..va.rows {
            let row = &va.data[i * va.cols..(i + 1) * va.cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            v.data[i] = m + s.ln();
        }
        let rg = self.rg(a);
        self.push(v, Op::LogSumExpRows(a), rg)
    }

    /// Mean over rows; n x c -> 1 x c.
    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let mut v = Tensor::zeros(1, va.cols);
        for i in 0..va.rows {
            for j in 0..va.cols {
                v.data[j] += va.data[i * va.cols + j];
            }
        }
        for j in 0..va.cols {
            v.data[j] /= va.rows as f64;
        }
        let rg = self.rg(a);
        self.push(v, Op::MeanRows(a), rg)
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows, vb.rows, "concat_cols row mismatch");
        let mut v = Tensor::zeros(va.rows, va.cols + vb.cols);
        for i in 0..va.rows {
            for j in 0..va.cols {
                v.set(i, j, va.get(i, j));
            }
            for j in 0..vb.cols {
                v.set(i, va.cols + j, vb.get(i, j));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let rows: usize = parts.iter().map(|&p| self.value(p).rows).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut r = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.cols, cols, "concat_rows col mismatch");
            v.data[r * cols..(r + vp.rows) * cols].copy_from_slice(&vp.data);
            r += vp.rows;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let va = self.value(a);
        assert!(start + len <= va.cols, "slice out of range");
        let mut v = Tensor::zeros(va.rows, len);
        for i in 0..va.rows {
            for j in 0..len {
                v.set(i, j, va.get(i, start + j));
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start, len), rg)
    }

    /// Normalize each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let mut v = Tensor::zeros(va.rows, va.cols);
        for i in 0..va.rows {
            let row = &va.data[i * va.cols..(i + 1) * va.cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm >= 1e-12, "degenerate row norm in l2_normalize_rows");
            for j in 0..va.cols {
                v.data[i * va.cols + j] = row[j] / norm;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::L2NormalizeRows(a), rg)
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let va = self.value(a);
        let v = Tensor::scalar(va.data.iter().sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    /// Elementwise multiply by a constant tensor (dropout masks, weights).
    pub fn mul_const(&mut self, a: VarId, c: Tensor) -> VarId {
        let va = self.value(a);
        assert_eq!((va.rows, va.cols), (c.rows, c.cols), "mul_const shape mismatch");
        let data = va.data.iter().zip(&c.data).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::MulConst(a, c), rg)
    }

    /// Elementwise add a constant tensor (e.g. a -inf diagonal mask).
    pub fn add_const(&mut self, a: VarId, c: Tensor) -> VarId {
        let va = self.value(a);
        assert_eq!((va.rows, va.cols), (c.rows, c.cols), "add_const shape mismatch");
        let data = va.data.iter().zip(&c.data).map(|(x, y)| x + y).collect();
        let v = Tensor::from_vec(va.rows, va.cols, data);
        let rg = self.rg(a);
        self.push(v, Op::AddConst(a), rg)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: VarId) -> Gradients {
        assert_eq!(self.value(loss).data.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn add_grad(&self, grads: &mut Vec<Option<Tensor>>, id: VarId, g: Tensor) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_in_place(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let y = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let da = g.matmul(&self.value(*b).transpose());
                    self.add_grad(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = self.value(*a).transpose().matmul(g);
                    self.add_grad(grads, *b, db);
                }
            }
            Op::Transpose(a) => self.add_grad(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                self.add_grad(grads, *b, neg);
            }
            Op::MulElem(a, b) => {
                if self.rg(*a) {
                    let vb = self.value(*b);
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect(),
                    );
                    self.add_grad(grads, *a, da);
                }
                if self.rg(*b) {
                    let va = self.value(*a);
                    let db = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect(),
                    );
                    self.add_grad(grads, *b, db);
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                self.add_grad(grads, *a, g.clone());
                if self.rg(*bias) {
                    let mut db = Tensor::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for j in 0..g.cols {
                            db.data[j] += g.data[i * g.cols + j];
                        }
                    }
                    self.add_grad(grads, *bias, db);
                }
            }
            Op::Scale(a, c) => {
                let da = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * c).collect());
                self.add_grad(grads, *a, da);
            }
            Op::AddScalar(a) => self.add_grad(grads, *a, g.clone()),
            Op::Relu(a) => {
                let va = self.value(*a);
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&va.data)
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect(),
                );
                self.add_grad(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&y.data)
                        .map(|(gv, &s)| gv * s * (1.0 - s))
                        .collect(),
                );
                self.add_grad(grads, *a, da);
            }
            Op::Tanh(a) => {
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data
                        .iter()
                        .zip(&y.data)
                        .map(|(gv, &t)| gv * (1.0 - t * t))
                        .collect(),
                );
                self.add_grad(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let mut da = Tensor::zeros(g.rows, g.cols);
                for i in 0..g.rows {
                    let yrow = &y.data[i * g.cols..(i + 1) * g.cols];
                    let grow = &g.data[i * g.cols..(i + 1) * g.cols];
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..g.cols {
                        da.data[i * g.cols + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::LogSumExpRows(a) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.rows, va.cols);
                for i in 0..va.rows {
                    let lse = y.data[i];
                    let gv = g.data[i];
                    for j in 0..va.cols {
                        da.data[i * va.cols + j] = gv * (va.data[i * va.cols + j] - lse).exp();
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let inv = 1.0 / va.rows as f64;
                let mut da = Tensor::zeros(va.rows, va.cols);
                for i in 0..va.rows {
                    for j in 0..va.cols {
                        da.data[i * va.cols + j] = g.data[j] * inv;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols, self.value(*b).cols);
                let mut da = Tensor::zeros(g.rows, ca);
                let mut db = Tensor::zeros(g.rows, cb);
                for i in 0..g.rows {
                    for j in 0..ca {
                        da.set(i, j, g.get(i, j));
                    }
                    for j in 0..cb {
                        db.set(i, j, g.get(i, ca + j));
                    }
                }
                self.add_grad(grads, *a, da);
                self.add_grad(grads, *b, db);
            }
            Op::ConcatRows(parts) => {
                let mut r = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut dp = Tensor::zeros(vp.rows, vp.cols);
                    dp.data
                        .copy_from_slice(&g.data[r * g.cols..(r + vp.rows) * g.cols]);
                    r += vp.rows;
                    self.add_grad(grads, p, dp);
                }
            }
            Op::SliceCols(a, start, len) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.rows, va.cols);
                for i in 0..g.rows {
                    for j in 0..*len {
                        da.set(i, start + j, g.get(i, j));
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::L2NormalizeRows(a) => {
                let va = self.value(*a);
                let mut da = Tensor::zeros(va.rows, va.cols);
                for i in 0..va.rows {
                    let xrow = &va.data[i * va.cols..(i + 1) * va.cols];
                    let yrow = &y.data[i * va.cols..(i + 1) * va.cols];
                    let grow = &g.data[i * va.cols..(i + 1) * va.cols];
                    let norm = xrow.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..va.cols {
                        da.data[i * va.cols + j] = (grow[j] - yrow[j] * dot) / norm;
                    }
                }
                self.add_grad(grads, *a, da);
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                let gv = g.data[0];
                let da = Tensor::from_vec(va.rows, va.cols, vec![gv; va.data.len()]);
                self.add_grad(grads, *a, da);
            }
            Op::MulConst(a, c) => {
                let da = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&c.data).map(|(x, y)| x * y).collect(),
                );
                self.add_grad(grads, *a, da);
            }
            Op::AddConst(a) => self.add_grad(grads, *a, g.clone()),
        }
    }
}
