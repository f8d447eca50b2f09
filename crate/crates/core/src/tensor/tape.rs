use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// out[m×n] = a[m×k] · b[k×n]
    Matmul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Valid cross-correlation, no padding.
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        stride: usize,
        dims: ConvDims,
    },
    /// x[C×H×W] + bias[C], broadcast over the spatial plane.
    AddChannelBias {
        x: NodeId,
        bias: NodeId,
    },
    /// x[N×D] + bias[D], broadcast over rows.
    AddRowBias {
        x: NodeId,
        bias: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    /// Per-window max; `argmax` holds the flat input index chosen per output
    /// element (first row-major maximum on ties).
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    /// Column-wise max over the rows of x[N×D]; `argmax` holds the winning
    /// flat input index per column (first row on ties).
    GlobalMaxPoints {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    /// Flattened concatenation into a 1×total row vector.
    Concat {
        parts: Vec<NodeId>,
    },
    /// Reshape to 1×numel; gradient passes through untouched.
    FlattenRow {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
    MeanAll {
        x: NodeId,
    },
    /// Elementwise square root; subgradient 0 where the input is exactly 0.
    Sqrt {
        x: NodeId,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation and replays it in reverse for gradients.
///
/// Operations are appended in execution order, so every node's inputs sit
/// earlier on the tape and one reverse sweep visits each node exactly once.
/// Accumulation order is fixed by the tape order, which keeps gradients
/// bitwise reproducible.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf value, copying the tensor's data onto the tape.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad,
        )
    }

    /// Registers a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::Dimension {
                context: "tape constant".into(),
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.push(vec![1], vec![value], Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient of the last `backward` target w.r.t. this node, if it was
    /// tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).filter(|g| !g.is_empty()).map(|g| &g[..])
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite forward value"
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        id
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                context: "matmul".into(),
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                for kk in 0..k {
                    let aik = av[i * k + kk];
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv[kk * n..(kk + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aik * brow[j];
                    }
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b, m, k, n }, rg))
    }

    /// Valid (unpadded) cross-correlation of input `[C×H×W]` with kernels
    /// `[F×C×kh×kw]`.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, stride: usize) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernels).to_vec();
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(Error::Dimension {
                context: "conv2d".into(),
                lhs: si,
                rhs: sk,
            });
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        let (in_c, in_h, in_w) = (si[0], si[1], si[2]);
        let (filters, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > in_h || kw > in_w {
            return Err(Error::Dimension {
                context: "conv2d kernel exceeds input".into(),
                lhs: si,
                rhs: sk,
            });
        }
        let out_h = (in_h - kh) / stride + 1;
        let out_w = (in_w - kw) / stride + 1;
        let dims = ConvDims {
            in_c,
            in_h,
            in_w,
            filters,
            kh,
            kw,
            out_h,
            out_w,
        };
        let mut out = vec![0.0; filters * out_h * out_w];
        {
            let xv = self.value(input);
            let kv = self.value(kernels);
            for f in 0..filters {
                for oi in 0..out_h {
                    for oj in 0..out_w {
                        let mut acc = 0.0;
                        for c in 0..in_c {
                            for u in 0..kh {
                                let in_row = (c * in_h + oi * stride + u) * in_w + oj * stride;
                                let k_row = ((f * in_c + c) * kh + u) * kw;
                                for v in 0..kw {
                                    acc += xv[in_row + v] * kv[k_row + v];
                                }
                            }
                        }
                        out[(f * out_h + oi) * out_w + oj] = acc;
                    }
                }
            }
        }
        let rg = self.needs(&[input, kernels]);
        Ok(self.push(
            vec![filters, out_h, out_w],
            out,
            Op::Conv2d {
                input,
                kernels,
                stride,
                dims,
            },
            rg,
        ))
    }

    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::Dimension {
                context: "add_channel_bias".into(),
                lhs: sx,
                rhs: sb,
            });
        }
        let plane = sx[1] * sx[2];
        let mut out = self.value(x).to_vec();
        {
            let bv = self.value(bias);
            for c in 0..sx[0] {
                let b = bv[c];
                for v in &mut out[c * plane..(c + 1) * plane] {
                    *v += b;
                }
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(sx, out, Op::AddChannelBias { x, bias }, rg))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::Dimension {
                context: "add_row_bias".into(),
                lhs: sx,
                rhs: sb,
            });
        }
        let (n, d) = (sx[0], sx[1]);
        let mut out = self.value(x).to_vec();
        {
            let bv = self.value(bias);
            for i in 0..n {
                for j in 0..d {
                    out[i * d + j] += bv[j];
                }
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(sx, out, Op::AddRowBias { x, bias }, rg))
    }

    /// Elementwise max(0, x). The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, Op::Sigmoid { x }, rg)
    }

    /// Per-window maximum over `[C×H×W]`; gradient routes to the first
    /// row-major argmax of each window.
    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::Dimension {
                context: "maxpool2d".into(),
                lhs: sx,
                rhs: vec![window, window],
            });
        }
        if window == 0 || stride == 0 {
            return Err(Error::Contract(
                "maxpool2d window and stride must be positive".into(),
            ));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        if window > h || window > w {
            return Err(Error::Dimension {
                context: "maxpool2d window exceeds input".into(),
                lhs: sx,
                rhs: vec![window, window],
            });
        }
        let out_h = (h - window) / stride + 1;
        let out_w = (w - window) / stride + 1;
        let mut out = vec![0.0; c * out_h * out_w];
        let mut argmax = vec![0usize; out.len()];
        {
            let xv = self.value(x);
            for ch in 0..c {
                for oi in 0..out_h {
                    for oj in 0..out_w {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for u in 0..window {
                            for v in 0..window {
                                let idx = (ch * h + oi * stride + u) * w + oj * stride + v;
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = (ch * out_h + oi) * out_w + oj;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            vec![c, out_h, out_w],
            out,
            Op::MaxPool2d { x, argmax },
            rg,
        ))
    }

    /// Column-wise maximum over the N rows of `[N×D]`, yielding `[D]`.
    ///
    /// The symmetric aggregation: any permutation of the rows produces a
    /// bitwise-identical output. Gradient routes to the first argmax row per
    /// column.
    pub fn global_max_over_points(&mut self, x: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::Dimension {
                context: "global_max_over_points".into(),
                lhs: sx,
                rhs: vec![],
            });
        }
        let (n, d) = (sx[0], sx[1]);
        if n == 0 {
            return Err(Error::EmptyInput("global_max_over_points".into()));
        }
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        {
            let xv = self.value(x);
            for j in 0..d {
                out[j] = xv[j];
                argmax[j] = j;
            }
            for i in 1..n {
                for j in 0..d {
                    let idx = i * d + j;
                    if xv[idx] > out[j] {
                        out[j] = xv[idx];
                        argmax[j] = idx;
                    }
                }
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(vec![d], out, Op::GlobalMaxPoints { x, argmax }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                context: name.into(),
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, out, op, rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape, out, Op::Scale { x, c }, rg)
    }

    /// Concatenates the flattened parts into a `1×total` row vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let total = out.len();
        let rg = self.needs(parts);
        Ok(self.push(
            vec![1, total],
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Reshapes to a `1×numel` row vector without touching the data.
    pub fn flatten_row(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).to_vec();
        let total = out.len();
        let rg = self.needs(&[x]);
        self.push(vec![1, total], out, Op::FlattenRow { x }, rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::SumAll { x }, rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s: f64 = self.value(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s / n], Op::MeanAll { x }, rg)
    }

    /// Elementwise square root. Inputs must be non-negative.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if self.value(x).iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric(
                "sqrt of negative value on the tape".into(),
            ));
        }
        let out: Vec<f64> = self.value(x).iter().map(|&v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Sqrt { x }, rg))
    }

    /// Reverse sweep from a scalar loss. Fills gradient buffers for every
    /// node on a differentiable path between a tracked leaf and the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(n);
        for node in &self.nodes {
            if node.requires_grad {
                grads.push(vec![0.0; node.data.len()]);
            } else {
                grads.push(Vec::new());
            }
        }
        let mut touched = vec![false; n];
        if !grads[loss.0].is_empty() {
            grads[loss.0][0] = 1.0;
            touched[loss.0] = true;
        }

        for id in (0..=loss.0).rev() {
            if !touched[id] || grads[id].is_empty() {
                continue;
            }
            // The output gradient is moved out so input buffers can be
            // borrowed mutably; it is restored afterwards.
            let g = std::mem::take(&mut grads[id]);
            self.backprop_node(id, &g, &mut grads, &mut touched);
            grads[id] = g;
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(
        &self,
        id: usize,
        g: &[f64],
        grads: &mut [Vec<f64>],
        touched: &mut [bool],
    ) {
        let mut sink = |nid: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !grads[nid.0].is_empty() {
                f(&mut grads[nid.0]);
                touched[nid.0] = true;
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                // dA = g · Bᵀ
                sink(*a, &mut |ga| {
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[kk * n + j];
                            }
                            ga[i * k + kk] += acc;
                        }
                    }
                });
                // dB = Aᵀ · g
                sink(*b, &mut |gb| {
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = av[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] += aik * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
                dims,
            } => {
                let d = *dims;
                let s = *stride;
                let xv = &self.nodes[input.0].data;
                let kv = &self.nodes[kernels.0].data;
                sink(*input, &mut |gx| {
                    for f in 0..d.filters {
                        for oi in 0..d.out_h {
                            for oj in 0..d.out_w {
                                let go = g[(f * d.out_h + oi) * d.out_w + oj];
                                if go == 0.0 {
                                    continue;
                                }
                                for c in 0..d.in_c {
                                    for u in 0..d.kh {
                                        let in_row =
                                            (c * d.in_h + oi * s + u) * d.in_w + oj * s;
                                        let k_row = ((f * d.in_c + c) * d.kh + u) * d.kw;
                                        for v in 0..d.kw {
                                            gx[in_row + v] += go * kv[k_row + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                sink(*kernels, &mut |gk| {
                    for f in 0..d.filters {
                        for oi in 0..d.out_h {
                            for oj in 0..d.out_w {
                                let go = g[(f * d.out_h + oi) * d.out_w + oj];
                                if go == 0.0 {
                                    continue;
                                }
                                for c in 0..d.in_c {
                                    for u in 0..d.kh {
                                        let in_row =
                                            (c * d.in_h + oi * s + u) * d.in_w + oj * s;
                                        let k_row = ((f * d.in_c + c) * d.kh + u) * d.kw;
                                        for v in 0..d.kw {
                                            gk[k_row + v] += go * xv[in_row + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::AddChannelBias { x, bias } => {
                sink(*x, &mut |gx| {
                    for (gi, &go) in gx.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
                let sx = &self.nodes[x.0].shape;
                let plane = sx[1] * sx[2];
                sink(*bias, &mut |gb| {
                    for (c, gc) in gb.iter_mut().enumerate() {
                        *gc += g[c * plane..(c + 1) * plane].iter().sum::<f64>();
                    }
                });
            }
            Op::AddRowBias { x, bias } => {
                sink(*x, &mut |gx| {
                    for (gi, &go) in gx.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
                let d = self.nodes[x.0].shape[1];
                let n = self.nodes[x.0].shape[0];
                sink(*bias, &mut |gb| {
                    for i in 0..n {
                        for j in 0..d {
                            gb[j] += g[i * d + j];
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xv = &self.nodes[x.0].data;
                sink(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = &self.nodes[id].data;
                sink(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::MaxPool2d { x, argmax } | Op::GlobalMaxPoints { x, argmax } => {
                sink(*x, &mut |gx| {
                    for (o, &idx) in argmax.iter().enumerate() {
                        gx[idx] += g[o];
                    }
                });
            }
            Op::Add { a, b } => {
                sink(*a, &mut |ga| {
                    for (gi, &go) in ga.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
                sink(*b, &mut |gb| {
                    for (gi, &go) in gb.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
            }
            Op::Sub { a, b } => {
                sink(*a, &mut |ga| {
                    for (gi, &go) in ga.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
                sink(*b, &mut |gb| {
                    for (gi, &go) in gb.iter_mut().zip(g) {
                        *gi -= go;
                    }
                });
            }
            Op::Mul { a, b } => {
                let av = &self.nodes[a.0].data;
                let bv = &self.nodes[b.0].data;
                sink(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                sink(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                sink(*x, &mut |gx| {
                    for (gi, &go) in gx.iter_mut().zip(g) {
                        *gi += go * c;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].data.len();
                    let seg = &g[offset..offset + len];
                    sink(p, &mut |gp| {
                        for (gi, &go) in gp.iter_mut().zip(seg) {
                            *gi += go;
                        }
                    });
                    offset += len;
                }
            }
            Op::FlattenRow { x } => {
                sink(*x, &mut |gx| {
                    for (gi, &go) in gx.iter_mut().zip(g) {
                        *gi += go;
                    }
                });
            }
            Op::SumAll { x } => {
                sink(*x, &mut |gx| {
                    for gi in gx.iter_mut() {
                        *gi += g[0];
                    }
                });
            }
            Op::MeanAll { x } => {
                let n = self.nodes[x.0].data.len() as f64;
                sink(*x, &mut |gx| {
                    for gi in gx.iter_mut() {
                        *gi += g[0] / n;
                    }
                });
            }
            Op::Sqrt { x } => {
                let yv = &self.nodes[id].data;
                sink(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if yv[i] > 0.0 {
                            gx[i] += g[i] * 0.5 / yv[i];
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        let t = Tensor::param(shape, data).unwrap();
        tape.leaf(&t)
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = leaf(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&mut tape, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector_row() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let b = leaf(&mut tape, vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = tape.matmul(p, b).unwrap();
        assert_eq!(tape.value(c), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![2, 3], vec![0.0; 6]);
        let b = leaf(&mut tape, vec![2, 2], vec![0.0; 4]);
        match tape.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv2d_scaling_kernel() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 3, 3], vec![1.0; 9]);
        let k = leaf(&mut tape, vec![1, 1, 1, 1], vec![2.0]);
        let y = tape.conv2d(x, k, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3]);
        assert_eq!(tape.value(y), &[2.0; 9]);
    }

    #[test]
    fn conv2d_block_means() {
        // 4×4 ramp 1..16, 2×2 averaging kernel, stride 2 → per-block means.
        let mut tape = Tape::new();
        let ramp: Vec<f64> = (1..=16).map(|v| v as f64).collect();
        let x = leaf(&mut tape, vec![1, 4, 4], ramp);
        let k = leaf(&mut tape, vec![1, 1, 2, 2], vec![0.25; 4]);
        let y = tape.conv2d(x, k, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn conv2d_kernel_too_large() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2, 2], vec![0.0; 4]);
        let k = leaf(&mut tape, vec![1, 1, 3, 3], vec![0.0; 9]);
        assert!(matches!(
            tape.conv2d(x, k, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn relu_forward_and_zero_backward() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);

        // All-negative input: zero output, zero gradient.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3], vec![-1.0, -2.0, -0.5]);
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.value(y), &[0.0; 3]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn maxpool_constant_and_small() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 4, 4], vec![7.0; 16]);
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert_eq!(tape.value(y), &[7.0; 4]);

        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y), &[4.0]);
    }

    #[test]
    fn maxpool_window_too_large() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 2, 2], vec![0.0; 4]);
        assert!(matches!(
            tape.maxpool2d(x, 3, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn maxpool_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..2 * 6 * 6).map(|_| rng.random::<f64>()).collect();
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2, 6, 6], data.clone());
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        // Brute-force window scan.
        let mut expect = Vec::new();
        for c in 0..2 {
            for oi in 0..3 {
                for oj in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    for u in 0..2 {
                        for v in 0..2 {
                            let idx = (c * 6 + oi * 2 + u) * 6 + oj * 2 + v;
                            best = best.max(data[idx]);
                        }
                    }
                    expect.push(best);
                }
            }
        }
        assert_eq!(tape.value(y), &expect[..]);
    }

    #[test]
    fn global_max_single_point_and_permutation() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1, 4], vec![0.5, -1.0, 3.0, 0.0]);
        let y = tape.global_max_over_points(x).unwrap();
        assert_eq!(tape.value(y), &[0.5, -1.0, 3.0, 0.0]);
    }

    #[test]
    fn global_max_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..16 * 8).map(|_| rng.random::<f64>()).collect();
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![16, 8], data.clone());
        let y = tape.global_max_over_points(x).unwrap();
        for j in 0..8 {
            let col_max = (0..16).map(|i| data[i * 8 + j]).fold(f64::MIN, f64::max);
            assert_eq!(tape.value(y)[j], col_max);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![4], vec![0.3, -0.2, 1.5, 0.0]);
        let loss = tape.sum_all(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_zero_times_function_gives_zero() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![3], vec![0.4, 0.8, -0.1]);
        let y = tape.relu(w);
        let s = tape.sum_all(y);
        let loss = tape.scale(s, 0.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, vec![2], vec![1.0, 2.0]);
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn sqrt_rejects_negative() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1], vec![-1.0]);
        assert!(matches!(tape.sqrt(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn constants_are_not_tracked() {
        let mut tape = Tape::new();
        let c = tape.scalar(5.0);
        let w = leaf(&mut tape, vec![1], vec![2.0]);
        let y = tape.mul(c, w).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(w).unwrap(), &[5.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Output shapes satisfy H' = floor((H-kh)/stride)+1 for all
            /// valid sampled combinations.
            #[test]
            fn conv_shape_algebra(
                h in 1usize..12,
                w in 1usize..12,
                kh in 1usize..6,
                kw in 1usize..6,
                stride in 1usize..4,
            ) {
                prop_assume!(kh <= h && kw <= w);
                let mut tape = Tape::new();
                let x = leaf(&mut tape, vec![1, h, w], vec![0.5; h * w]);
                let k = leaf(&mut tape, vec![1, 1, kh, kw], vec![1.0; kh * kw]);
                let y = tape.conv2d(x, k, stride).unwrap();
                let eh = (h - kh) / stride + 1;
                let ew = (w - kw) / stride + 1;
                prop_assert_eq!(tape.shape(y), &[1, eh, ew]);
            }

            #[test]
            fn pool_shape_algebra(
                h in 1usize..12,
                w in 1usize..12,
                win in 1usize..5,
                stride in 1usize..4,
            ) {
                prop_assume!(win <= h && win <= w);
                let mut tape = Tape::new();
                let x = leaf(&mut tape, vec![1, h, w], vec![0.0; h * w]);
                let y = tape.maxpool2d(x, win, stride).unwrap();
                let eh = (h - win) / stride + 1;
                let ew = (w - win) / stride + 1;
                prop_assert_eq!(tape.shape(y), &[1, eh, ew]);
            }

            /// global_max_over_points(P·x) == global_max_over_points(x)
            /// exactly, for random permutations P.
            #[test]
            fn global_max_permutation_symmetry(
                data in proptest::collection::vec(-1.0f64..1.0, 24),
                seed in 0u64..1000,
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let (n, d) = (6, 4);
                let mut tape = Tape::new();
                let x = leaf(&mut tape, vec![n, d], data.clone());
                let y = tape.global_max_over_points(x).unwrap();
                let base = tape.value(y).to_vec();

                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut rows: Vec<usize> = (0..n).collect();
                rows.shuffle(&mut rng);
                let mut permuted = Vec::with_capacity(n * d);
                for &r in &rows {
                    permuted.extend_from_slice(&data[r * d..(r + 1) * d]);
                }
                let mut tape = Tape::new();
                let x = leaf(&mut tape, vec![n, d], permuted);
                let y = tape.global_max_over_points(x).unwrap();
                prop_assert_eq!(tape.value(y), &base[..]);
            }
        }
    }
}
