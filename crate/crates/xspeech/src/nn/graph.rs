//! Reverse-mode autodiff over 2-D f64 tensors.
//!
//! A [`Graph`] is a tape: ops append nodes eagerly, `backward` walks the tape
//! in reverse. Everything is row-major `(rows, cols)`; sequences are `(T, D)`
//! matrices, scalars are `(1, 1)`.

use ndarray::{Array1, Array2, Axis};

pub type Mat = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    /// Constant or parameter leaf. `param` carries the ParamStore index so
    /// gradients can be collected after backward.
    Leaf { param: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    /// Broadcast-add a 1xD row onto every row of a TxD matrix.
    AddRow(usize, usize),
    AddConst(usize),
    MulConst(usize, Mat),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    /// -(1/denom) * sum of logp[r, c] over picks.
    PickNll {
        logp: usize,
        picks: Vec<(usize, usize)>,
        denom: f64,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<usize>),
    /// Overwrite the given rows of `x` with the single row `row`.
    ReplaceRows {
        x: usize,
        row: usize,
        positions: Vec<usize>,
    },
    /// im2col for 1-D convolution: (T, C) -> (T_out, C*kernel), valid padding.
    Patches {
        x: usize,
        kernel: usize,
        stride: usize,
    },
    /// CTC negative log-likelihood of `target` given per-frame log-probs.
    CtcLoss {
        logp: usize,
        target: Vec<usize>,
        blank: usize,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    /// Leaf whose gradient is reported against ParamStore slot `idx`.
    pub fn param(&mut self, idx: usize, value: Mat) -> Var {
        self.push(value, Op::Leaf { param: Some(idx) })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = &self.nodes[row.0].value;
        assert_eq!(r.nrows(), 1, "add_row expects a 1xD row");
        let v = &self.nodes[a.0].value + &r.row(0);
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn add_const(&mut self, a: Var, m: &Mat) -> Var {
        let v = &self.nodes[a.0].value + m;
        self.push(v, Op::AddConst(a.0))
    }

    pub fn mul_const(&mut self, a: Var, m: Mat) -> Var {
        let v = &self.nodes[a.0].value * &m;
        self.push(v, Op::MulConst(a.0, m))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(gelu);
        self.push(v, Op::Gelu(a.0))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xs = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value;
        let b = &self.nodes[bias.0].value;
        assert_eq!(g.nrows(), 1);
        assert_eq!(b.nrows(), 1);
        let d = xs.ncols() as f64;
        let mut out = xs.clone();
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[(0, j)] + b[(0, j)];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a.0))
    }

    /// Negative log-likelihood: -(1/denom) * Σ logp[r, c] over (r, c) picks.
    pub fn pick_nll(&mut self, logp: Var, picks: Vec<(usize, usize)>, denom: f64) -> Var {
        let lp = &self.nodes[logp.0].value;
        let mut total = 0.0;
        for &(r, c) in &picks {
            total -= lp[(r, c)];
        }
        let v = Mat::from_elem((1, 1), total / denom);
        self.push(
            v,
            Op::PickNll {
                logp: logp.0,
                picks,
                denom,
            },
        )
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let mut v = Mat::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        self.push(
            v,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self
            .nodes[x.0]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        self.push(
            v,
            Op::SliceRows {
                x: x.0,
                start,
                len,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self
            .nodes[x.0]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(
            v,
            Op::SliceCols {
                x: x.0,
                start,
                len,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn replace_rows(&mut self, x: Var, row: Var, positions: &[usize]) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let mut v = self.nodes[x.0].value.clone();
        for &p in positions {
            v.row_mut(p).assign(&r);
        }
        self.push(
            v,
            Op::ReplaceRows {
                x: x.0,
                row: row.0,
                positions: positions.to_vec(),
            },
        )
    }

    /// Sliding windows for valid-padding strided 1-D convolution.
    /// Input (T, C) yields (1 + (T - kernel)/stride, C*kernel); each output row
    /// is the concatenation of `kernel` consecutive input rows.
    pub fn patches(&mut self, x: Var, kernel: usize, stride: usize) -> Var {
        let xs = &self.nodes[x.0].value;
        let t = xs.nrows();
        let c = xs.ncols();
        assert!(t >= kernel, "patches: input shorter than kernel");
        let t_out = 1 + (t - kernel) / stride;
        let mut v = Mat::zeros((t_out, c * kernel));
        for i in 0..t_out {
            for j in 0..kernel {
                for ch in 0..c {
                    v[(i, j * c + ch)] = xs[(i * stride + j, ch)];
                }
            }
        }
        self.push(
            v,
            Op::Patches {
                x: x.0,
                kernel,
                stride,
            },
        )
    }

    /// CTC negative log-likelihood. `logp` is (T, V) per-frame log-probs
    /// (already log-softmaxed); admissibility must be checked by the caller.
    pub fn ctc_loss(&mut self, logp: Var, target: &[usize], blank: usize) -> Var {
        let lp = &self.nodes[logp.0].value;
        let nll = ctc_forward(lp, target, blank);
        let v = Mat::from_elem((1, 1), nll);
        self.push(
            v,
            Op::CtcLoss {
                logp: logp.0,
                target: target.to_vec(),
                blank,
            },
        )
    }

    /// Reverse pass from `loss` (any node; typically 1x1).
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Mat::from_elem(self.nodes[loss.0].value.dim(), 1.0);
        grads[loss.0] = Some(seed);
        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    /// Collect (param_index, grad) pairs after a backward pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(usize, Mat)> {
        let mut out = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = &grads.grads[id] {
                    out.push((p, g.clone()));
                }
            }
        }
        out
    }

    fn backprop_node(&self, id: usize, g: &Mat, grads: &mut Vec<Option<Mat>>) {
        let acc = |grads: &mut Vec<Option<Mat>>, ix: usize, delta: Mat| {
            match &mut grads[ix] {
                Some(cur) => *cur += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                let ga = g * &self.nodes[*b].value;
                let gb = g * &self.nodes[*a].value;
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale(a, c) => acc(grads, *a, g * *c),
            Op::MatMul(a, b) => {
                let ga = g.dot(&self.nodes[*b].value.t());
                let gb = self.nodes[*a].value.t().dot(g);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
            Op::AddRow(a, row) => {
                acc(grads, *a, g.clone());
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(grads, *row, gr);
            }
            Op::AddConst(a) => acc(grads, *a, g.clone()),
            Op::MulConst(a, m) => acc(grads, *a, g * m),
            Op::Gelu(a) => {
                let ga = ndarray::Zip::from(g)
                    .and(&self.nodes[*a].value)
                    .map_collect(|gy, &x| gy * gelu_deriv(x));
                acc(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xs = &self.nodes[*x].value;
                let gn = &self.nodes[*gain].value;
                let d = xs.ncols();
                let df = d as f64;
                let mut gx = Mat::zeros(xs.dim());
                let mut ggain = Array1::<f64>::zeros(d);
                let mut gbias = Array1::<f64>::zeros(d);
                for (r, xrow) in xs.rows().into_iter().enumerate() {
                    let mean = xrow.sum() / df;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let inv = 1.0 / (var + eps).sqrt();
                    // dxhat, and the two reduction terms of the layernorm backward
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv;
                        let dxh = g[(r, j)] * gn[(0, j)];
                        dxhat[j] = dxh;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat;
                        ggain[j] += g[(r, j)] * xhat;
                        gbias[j] += g[(r, j)];
                    }
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv;
                        gx[(r, j)] =
                            inv * (dxhat[j] - sum_dxhat / df - xhat * sum_dxhat_xhat / df);
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *gain, ggain.insert_axis(Axis(0)));
                acc(grads, *bias, gbias.insert_axis(Axis(0)));
            }
            Op::SoftmaxRows(a) => {
                let s = &self.nodes[id].value;
                let mut ga = Mat::zeros(s.dim());
                for r in 0..s.nrows() {
                    let dot: f64 = (0..s.ncols()).map(|j| g[(r, j)] * s[(r, j)]).sum();
                    for j in 0..s.ncols() {
                        ga[(r, j)] = s[(r, j)] * (g[(r, j)] - dot);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::LogSoftmaxRows(a) => {
                let lp = &self.nodes[id].value;
                let mut ga = g.clone();
                for r in 0..lp.nrows() {
                    let gsum: f64 = (0..lp.ncols()).map(|j| g[(r, j)]).sum();
                    for j in 0..lp.ncols() {
                        ga[(r, j)] -= lp[(r, j)].exp() * gsum;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::PickNll { logp, picks, denom } => {
                let gs = g[(0, 0)];
                let shape = self.nodes[*logp].value.dim();
                let mut glp = Mat::zeros(shape);
                for &(r, c) in picks {
                    glp[(r, c)] -= gs / denom;
                }
                acc(grads, *logp, glp);
            }
            Op::GatherRows { table, ids } => {
                let shape = self.nodes[*table].value.dim();
                let mut gt = Mat::zeros(shape);
                for (i, &idx) in ids.iter().enumerate() {
                    let mut dst = gt.row_mut(idx);
                    dst += &g.row(i);
                }
                acc(grads, *table, gt);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.nodes[p].value.nrows();
                    let gp = g.slice(ndarray::s![start..start + n, ..]).to_owned();
                    acc(grads, p, gp);
                    start += n;
                }
            }
            Op::SliceRows { x, start, len } => {
                let shape = self.nodes[*x].value.dim();
                let mut gx = Mat::zeros(shape);
                gx.slice_mut(ndarray::s![*start..*start + *len, ..]).assign(g);
                acc(grads, *x, gx);
            }
            Op::SliceCols { x, start, len } => {
                let shape = self.nodes[*x].value.dim();
                let mut gx = Mat::zeros(shape);
                gx.slice_mut(ndarray::s![.., *start..*start + *len]).assign(g);
                acc(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.nodes[p].value.ncols();
                    let gp = g.slice(ndarray::s![.., start..start + n]).to_owned();
                    acc(grads, p, gp);
                    start += n;
                }
            }
            Op::ReplaceRows { x, row, positions } => {
                let mut gx = g.clone();
                let mut grow = Array1::<f64>::zeros(g.ncols());
                for &p in positions {
                    grow += &g.row(p);
                    gx.row_mut(p).fill(0.0);
                }
                acc(grads, *x, gx);
                acc(grads, *row, grow.insert_axis(Axis(0)));
            }
            Op::Patches { x, kernel, stride } => {
                let xs = &self.nodes[*x].value;
                let c = xs.ncols();
                let mut gx = Mat::zeros(xs.dim());
                for i in 0..g.nrows() {
                    for j in 0..*kernel {
                        for ch in 0..c {
                            gx[(i * stride + j, ch)] += g[(i, j * c + ch)];
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::CtcLoss {
                logp,
                target,
                blank,
            } => {
                let gs = g[(0, 0)];
                let lp = &self.nodes[*logp].value;
                let glp = ctc_backward(lp, target, *blank) * gs;
                acc(grads, *logp, glp);
            }
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Extended CTC label sequence: blanks interleaved around the target.
fn ctc_extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

fn ctc_alpha(logp: &Mat, ext: &[usize]) -> Mat {
    let t_len = logp.nrows();
    let u_len = ext.len();
    let mut alpha = Mat::from_elem((t_len, u_len), f64::NEG_INFINITY);
    alpha[(0, 0)] = logp[(0, ext[0])];
    if u_len > 1 {
        alpha[(0, 1)] = logp[(0, ext[1])];
    }
    for t in 1..t_len {
        for u in 0..u_len {
            let mut a = alpha[(t - 1, u)];
            if u >= 1 {
                a = log_add(a, alpha[(t - 1, u - 1)]);
            }
            // skip transition allowed when labels two apart differ (and are not blank)
            if u >= 2 && ext[u] != ext[u - 2] {
                a = log_add(a, alpha[(t - 1, u - 2)]);
            }
            alpha[(t, u)] = a + logp[(t, ext[u])];
        }
    }
    alpha
}

/// CTC forward score: -log P(target | logp).
fn ctc_forward(logp: &Mat, target: &[usize], blank: usize) -> f64 {
    let ext = ctc_extended(target, blank);
    let alpha = ctc_alpha(logp, &ext);
    let t_last = logp.nrows() - 1;
    let u_len = ext.len();
    let mut total = alpha[(t_last, u_len - 1)];
    if u_len > 1 {
        total = log_add(total, alpha[(t_last, u_len - 2)]);
    }
    -total
}

/// Gradient of CTC NLL w.r.t. the input log-probs: -gamma occupancy.
fn ctc_backward(logp: &Mat, target: &[usize], blank: usize) -> Mat {
    let ext = ctc_extended(target, blank);
    let t_len = logp.nrows();
    let u_len = ext.len();
    let alpha = ctc_alpha(logp, &ext);
    let mut beta = Mat::from_elem((t_len, u_len), f64::NEG_INFINITY);
    beta[(t_len - 1, u_len - 1)] = 0.0;
    if u_len > 1 {
        beta[(t_len - 1, u_len - 2)] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for u in 0..u_len {
            let mut b = beta[(t + 1, u)] + logp[(t + 1, ext[u])];
            if u + 1 < u_len {
                b = log_add(b, beta[(t + 1, u + 1)] + logp[(t + 1, ext[u + 1])]);
            }
            if u + 2 < u_len && ext[u + 2] != ext[u] {
                b = log_add(b, beta[(t + 1, u + 2)] + logp[(t + 1, ext[u + 2])]);
            }
            beta[(t, u)] = b;
        }
    }
    let mut log_z = f64::NEG_INFINITY;
    {
        let t_last = t_len - 1;
        log_z = log_add(log_z, alpha[(t_last, u_len - 1)]);
        if u_len > 1 {
            log_z = log_add(log_z, alpha[(t_last, u_len - 2)]);
        }
    }
    let mut grad = Mat::zeros(logp.dim());
    for t in 0..t_len {
        // gamma over classes in log space
        let mut occ = vec![f64::NEG_INFINITY; logp.ncols()];
        for u in 0..u_len {
            let val = alpha[(t, u)] + beta[(t, u)];
            occ[ext[u]] = log_add(occ[ext[u]], val);
        }
        for k in 0..logp.ncols() {
            if occ[k] != f64::NEG_INFINITY {
                grad[(t, k)] = -((occ[k] - log_z).exp());
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences on every element of every leaf named in
    /// `leaves`, against the autodiff gradient of the scalar produced by `f`.
    fn check_grads<F>(leaves: Vec<Mat>, f: F, tol: f64)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let build = |vals: &[Mat]| -> (Graph, Vec<Var>, Var) {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|m| g.param(0, m.clone())).collect();
            let loss = f(&mut g, &vars);
            (g, vars, loss)
        };
        let (g, vars, loss) = build(&leaves);
        assert_eq!(g.value(loss).dim(), (1, 1), "loss must be scalar");
        let grads = g.backward(loss);
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads
                .get(vars[li])
                .cloned()
                .unwrap_or_else(|| Mat::zeros(leaf.dim()));
            for r in 0..leaf.nrows() {
                for c in 0..leaf.ncols() {
                    let mut plus = leaves.clone();
                    plus[li][(r, c)] += h;
                    let (gp, _, lp) = build(&plus);
                    let mut minus = leaves.clone();
                    minus[li][(r, c)] -= h;
                    let (gm, _, lm) = build(&minus);
                    let fd = (gp.value(lp)[(0, 0)] - gm.value(lm)[(0, 0)]) / (2.0 * h);
                    let a = analytic[(r, c)];
                    let denom = fd.abs().max(a.abs()).max(1e-8);
                    assert!(
                        (fd - a).abs() / denom < tol,
                        "leaf {li} ({r},{c}): fd={fd} analytic={a}"
                    );
                }
            }
        }
    }

    #[test]
    fn add_mul_matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let c = rand_mat(&mut rng, 3, 2);
        check_grads(vec![a, b, c], |g, v| {
            let mm = g.matmul(v[0], v[1]);
            let s = g.add(mm, v[2]);
            let sq = g.mul(s, s);
            let lp = g.log_softmax_rows(sq);
            g.pick_nll(lp, vec![(0, 0), (1, 1), (2, 0)], 3.0)
        }, 1e-6);
    }

    #[test]
    fn layer_norm_softmax_gelu_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 3, 5);
        let gain = rand_mat(&mut rng, 1, 5);
        let bias = rand_mat(&mut rng, 1, 5);
        check_grads(vec![x, gain, bias], |g, v| {
            let ln = g.layer_norm(v[0], v[1], v[2], 1e-5);
            let ge = g.gelu(ln);
            let sm = g.softmax_rows(ge);
            let lp = g.log_softmax_rows(sm);
            g.pick_nll(lp, vec![(0, 1), (1, 2), (2, 3)], 3.0)
        }, 1e-5);
    }

    #[test]
    fn slice_concat_gather_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = rand_mat(&mut rng, 6, 4);
        let row = rand_mat(&mut rng, 1, 4);
        check_grads(vec![table, row], |g, v| {
            let x = g.gather_rows(v[0], &[0, 2, 2, 5]);
            let x = g.replace_rows(x, v[1], &[1, 3]);
            let left = g.slice_cols(x, 0, 2);
            let right = g.slice_cols(x, 2, 2);
            let swapped = g.concat_cols(&[right, left]);
            let top = g.slice_rows(swapped, 0, 2);
            let bot = g.slice_rows(swapped, 2, 2);
            let sum = g.add(top, bot);
            let joined = g.concat_rows(&[sum, top]);
            let lp = g.log_softmax_rows(joined);
            g.pick_nll(lp, vec![(0, 0), (1, 3), (2, 2), (3, 1)], 4.0)
        }, 1e-6);
    }

    #[test]
    fn patches_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 9, 2);
        let w = rand_mat(&mut rng, 6, 3); // kernel 3, channels 2 -> 6 cols; 3 out channels
        check_grads(vec![x, w], |g, v| {
            let p = g.patches(v[0], 3, 2); // -> (4, 6)
            let y = g.matmul(p, v[1]); // (4, 3)
            let lp = g.log_softmax_rows(y);
            g.pick_nll(lp, vec![(0, 0), (1, 1), (2, 2), (3, 0)], 4.0)
        }, 1e-6);
    }

    #[test]
    fn patches_length_follows_conv_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(Mat::zeros((101, 1)));
        let p = g.patches(x, 10, 5);
        // floor((101 - 10)/5) + 1 = 19
        assert_eq!(g.value(p).nrows(), 19);
        assert_eq!(g.value(p).ncols(), 10);
    }

    #[test]
    fn ctc_loss_matches_enumeration() {
        // Brute-force oracle: enumerate all |V|^T frame paths, keep those
        // whose collapse equals the target, and sum their probabilities.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let t_len = 1 + (trial % 4);
            let vocab = 3usize; // 2 labels + blank
            let blank = 2usize;
            let raw = rand_mat(&mut rng, t_len, vocab);
            let mut g = Graph::new();
            let x = g.param(0, raw.clone());
            let lp = g.log_softmax_rows(x);
            let target: Vec<usize> = match trial % 3 {
                0 => vec![0],
                1 => vec![0, 1],
                _ => vec![1],
            };
            let ext_min = target.len()
                + target.windows(2).filter(|w| w[0] == w[1]).count();
            if t_len < ext_min {
                continue;
            }
            let loss = g.ctc_loss(lp, &target, blank);
            let lpv = g.value(lp).clone();
            let mut total = 0.0;
            let paths = vocab.pow(t_len as u32);
            for code in 0..paths {
                let mut path = Vec::with_capacity(t_len);
                let mut c = code;
                for _ in 0..t_len {
                    path.push(c % vocab);
                    c /= vocab;
                }
                // collapse: drop repeats then blanks
                let mut collapsed = Vec::new();
                let mut last = usize::MAX;
                for &s in &path {
                    if s != last {
                        if s != blank {
                            collapsed.push(s);
                        }
                        last = s;
                    }
                }
                if collapsed == target {
                    let logp: f64 = path.iter().enumerate().map(|(t, &s)| lpv[(t, s)]).sum();
                    total += logp.exp();
                }
            }
            let expect = -total.ln();
            let got = g.value(loss)[(0, 0)];
            assert!(
                (expect - got).abs() < 1e-9,
                "T={t_len} target={target:?}: oracle {expect} vs ctc {got}"
            );
        }
    }

    #[test]
    fn ctc_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = rand_mat(&mut rng, 4, 3);
        check_grads(vec![raw], |g, v| {
            let lp = g.log_softmax_rows(v[0]);
            g.ctc_loss(lp, &[0, 1], 2)
        }, 1e-5);
    }

    #[test]
    fn uniform_log_softmax_nll_is_ln_vocab() {
        let mut g = Graph::new();
        let x = g.constant(Mat::zeros((4, 7)));
        let lp = g.log_softmax_rows(x);
        let loss = g.pick_nll(lp, vec![(0, 1), (1, 2), (2, 3), (3, 4)], 4.0);
        let expect = (7.0f64).ln();
        assert!((g.value(loss)[(0, 0)] - expect).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax_rows(v);
        for row in g.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
