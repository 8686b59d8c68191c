use std::sync::Arc;

use super::{AutodiffError, CsrPattern, Gradients, IndexSets, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a same-padded, stride-1 square convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Odd kernel side length.
    pub kernel: usize,
}

/// Per-edge inputs of the directional response primitive: edge direction,
/// adjacency weight and, for the spatial kernel, the distance bins whose
/// window covers the edge length.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalEdges {
    pub theta: Vec<f64>,
    pub adjacency: Vec<f64>,
    /// `None` means a single implicit bin covering every edge.
    pub bins: Option<IndexSets>,
    pub bin_count: usize,
}

impl DirectionalEdges {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn bins_of(&self, e: usize) -> BinIter<'_> {
        match &self.bins {
            Some(sets) => BinIter::Listed(sets.get(e).iter()),
            None => BinIter::Single(Some(0)),
        }
    }
}

enum BinIter<'a> {
    Listed(std::slice::Iter<'a, usize>),
    Single(Option<usize>),
}

impl Iterator for BinIter<'_> {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        match self {
            BinIter::Listed(it) => it.next().copied(),
            BinIter::Single(b) => b.take(),
        }
    }
}

enum Theta {
    Trainable(Var),
    Fixed(Arc<[f64]>),
}

enum Op {
    Input,
    Param(ParamId),
    SpMv { pattern: Arc<CsrPattern>, matrix: Var, x: Var },
    Add(Var, Var),
    AddScaled { a: Var, b: Var, scale: f64 },
    Scale(Var, f64),
    MulConst { x: Var, factors: Arc<[f64]> },
    ChannelMax { inputs: Vec<Var>, argmax: Vec<u32> },
    SetMax { x: Var, argmax: Vec<usize> },
    Gather { x: Var, indices: Arc<[usize]> },
    Concat(Vec<Var>),
    Affine { x: Var, w: Var, b: Option<Var>, rows: usize, inputs: usize, outputs: usize },
    Relu(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, shape: ConvShape },
    Sum(Var),
    SquaredError { pred: Var, target: Arc<[f64]> },
    SoftmaxXent { logits: Var, sets: Arc<IndexSets>, labels: Arc<[usize]>, probs: Vec<f64> },
    Directional { w: Var, theta: Theta, edges: Arc<DirectionalEdges>, order: f64, response: Vec<f64> },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records primitive applications in execution order and replays them in
/// reverse to produce parameter gradients.
///
/// Parameter values are copied onto the tape when first referenced, so a tape
/// never borrows its [`ParamStore`]; several tapes may run concurrently
/// against one snapshot.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(primitive: &'static str, detail: impl Into<String>) -> AutodiffError {
    AutodiffError::Shape { primitive, detail: detail.into() }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, primitive: &'static str, value: Vec<f64>, op: Op) -> Result<Var, AutodiffError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AutodiffError::NonFinite { primitive });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> Result<Var, AutodiffError> {
        self.push("input", value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, AutodiffError> {
        let value = store.get(id).values.clone();
        self.push("param", value, Op::Param(id))
    }

    /// Sparse matrix (values on `pattern`) times dense vector.
    pub fn spmv(&mut self, pattern: &Arc<CsrPattern>, matrix: Var, x: Var) -> Result<Var, AutodiffError> {
        if self.len_of(matrix) != pattern.nnz() || self.len_of(x) != pattern.dim() {
            return Err(shape_err(
                "spmv",
                format!("pattern {}x{} nnz {}, matrix {}, vector {}", pattern.dim(), pattern.dim(), pattern.nnz(), self.len_of(matrix), self.len_of(x)),
            ));
        }
        let mut y = vec![0.0; pattern.dim()];
        pattern.matvec(self.value(matrix), self.value(x), &mut y);
        self.push("spmv", y, Op::SpMv { pattern: pattern.clone(), matrix, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.len_of(a) != self.len_of(b) {
            return Err(shape_err("add", format!("{} vs {}", self.len_of(a), self.len_of(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", value, Op::Add(a, b))
    }

    /// `a + scale * b`.
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Result<Var, AutodiffError> {
        if self.len_of(a) != self.len_of(b) {
            return Err(shape_err("add", format!("{} vs {}", self.len_of(a), self.len_of(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + scale * y).collect();
        self.push("add", value, Op::AddScaled { a, b, scale })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, AutodiffError> {
        let value = self.value(x).iter().map(|v| v * s).collect();
        self.push("scale", value, Op::Scale(x, s))
    }

    /// Elementwise product with constant factors.
    pub fn mul_const(&mut self, x: Var, factors: &Arc<[f64]>) -> Result<Var, AutodiffError> {
        if self.len_of(x) != factors.len() {
            return Err(shape_err("mul_const", format!("{} vs {}", self.len_of(x), factors.len())));
        }
        let value = self.value(x).iter().zip(factors.iter()).map(|(a, b)| a * b).collect();
        self.push("mul_const", value, Op::MulConst { x, factors: factors.clone() })
    }

    /// Per-position maximum across equally long channels. Ties go to the
    /// lowest channel index.
    pub fn channel_max(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = inputs.first() else {
            return Err(AutodiffError::EmptyReduction { primitive: "channel_max", set: 0 });
        };
        let n = self.len_of(first);
        if let Some(bad) = inputs.iter().find(|&&v| self.len_of(v) != n) {
            return Err(shape_err("channel_max", format!("{} vs {}", self.len_of(*bad), n)));
        }
        let mut value = self.value(first).to_vec();
        let mut argmax = vec![0u32; n];
        for (c, &v) in inputs.iter().enumerate().skip(1) {
            for (i, &x) in self.value(v).iter().enumerate() {
                if x > value[i] {
                    value[i] = x;
                    argmax[i] = c as u32;
                }
            }
        }
        self.push("channel_max", value, Op::ChannelMax { inputs: inputs.to_vec(), argmax })
    }

    /// For each index set, the maximum of `x` over that set. Ties go to the
    /// earliest index in the set.
    pub fn set_max(&mut self, x: Var, sets: &IndexSets) -> Result<Var, AutodiffError> {
        let n = self.len_of(x);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(sets.len());
        let mut argmax = Vec::with_capacity(sets.len());
        for (s, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(AutodiffError::EmptyReduction { primitive: "set_max", set: s });
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= n) {
                return Err(shape_err("set_max", format!("index {bad} out of range {n}")));
            }
            let (k, v) = argmax_first(set.iter().map(|&i| xv[i]));
            value.push(v);
            argmax.push(set[k]);
        }
        self.push("set_max", value, Op::SetMax { x, argmax })
    }

    pub fn gather(&mut self, x: Var, indices: &Arc<[usize]>) -> Result<Var, AutodiffError> {
        let n = self.len_of(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of range {n}")));
        }
        let xv = self.value(x);
        let value = indices.iter().map(|&i| xv[i]).collect();
        self.push("gather", value, Op::Gather { x, indices: indices.clone() })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let value = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push("concat", value, Op::Concat(parts.to_vec()))
    }

    /// Row-major `x (rows x inputs) * w (inputs x outputs) + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>, inputs: usize, outputs: usize) -> Result<Var, AutodiffError> {
        let xl = self.len_of(x);
        if inputs == 0 || !xl.is_multiple_of(inputs) || self.len_of(w) != inputs * outputs {
            return Err(shape_err("affine", format!("x {xl}, w {}, {inputs}->{outputs}", self.len_of(w))));
        }
        if let Some(b) = b {
            if self.len_of(b) != outputs {
                return Err(shape_err("affine", format!("bias {} vs {outputs}", self.len_of(b))));
            }
        }
        let rows = xl / inputs;
        let (xv, wv) = (self.value(x), self.value(w));
        let mut y = vec![0.0; rows * outputs];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_exact_mut(outputs) {
                row.copy_from_slice(bv);
            }
        }
        for r in 0..rows {
            let yr = &mut y[r * outputs..(r + 1) * outputs];
            for (i, &xi) in xv[r * inputs..(r + 1) * inputs].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (yo, &wio) in yr.iter_mut().zip(&wv[i * outputs..(i + 1) * outputs]) {
                    *yo += xi * wio;
                }
            }
        }
        self.push("affine", y, Op::Affine { x, w, b, rows, inputs, outputs })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push("relu", value, Op::Relu(x))
    }

    /// Same-padded, stride-1 convolution of a `(in_channels, height, width)`
    /// image with `(out_channels, in_channels, k, k)` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, shape: ConvShape) -> Result<Var, AutodiffError> {
        let ConvShape { in_channels: ci, out_channels: co, height: h, width: wd, kernel: k } = shape;
        if k % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel side {k} must be odd")));
        }
        if self.len_of(x) != ci * h * wd || self.len_of(w) != co * ci * k * k {
            return Err(shape_err("conv2d", format!("x {}, w {} for {shape:?}", self.len_of(x), self.len_of(w))));
        }
        if let Some(b) = b {
            if self.len_of(b) != co {
                return Err(shape_err("conv2d", format!("bias {} vs {co}", self.len_of(b))));
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let mut y = vec![0.0; co * h * wd];
        let half = (k / 2) as isize;
        for o in 0..co {
            let bias = b.map_or(0.0, |b| self.value(b)[o]);
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = bias;
                    for i in 0..ci {
                        for kr in 0..k {
                            let rr = r as isize + kr as isize - half;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            for kc in 0..k {
                                let cc = c as isize + kc as isize - half;
                                if cc < 0 || cc >= wd as isize {
                                    continue;
                                }
                                acc += wv[((o * ci + i) * k + kr) * k + kc] * xv[(i * h + rr as usize) * wd + cc as usize];
                            }
                        }
                    }
                    y[(o * h + r) * wd + c] = acc;
                }
            }
        }
        self.push("conv2d", y, Op::Conv2d { x, w, b, shape })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![s], Op::Sum(x))
    }

    /// `sum_i (target_i - pred_i)^2`.
    pub fn squared_error(&mut self, pred: Var, target: &Arc<[f64]>) -> Result<Var, AutodiffError> {
        if self.len_of(pred) != target.len() {
            return Err(shape_err("squared_error", format!("{} vs {}", self.len_of(pred), target.len())));
        }
        let loss = self.value(pred).iter().zip(target.iter()).map(|(p, t)| (t - p) * (t - p)).sum();
        self.push("squared_error", vec![loss], Op::SquaredError { pred, target: target.clone() })
    }

    /// Summed cross-entropy of a softmax over each index set of `logits`
    /// against the label position within that set.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        sets: &Arc<IndexSets>,
        labels: &Arc<[usize]>,
    ) -> Result<Var, AutodiffError> {
        if sets.len() != labels.len() {
            return Err(shape_err("softmax_cross_entropy", format!("{} sets, {} labels", sets.len(), labels.len())));
        }
        let n = self.len_of(logits);
        let xv = self.value(logits);
        let mut probs = Vec::new();
        let mut loss = 0.0;
        for (s, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(AutodiffError::EmptyReduction { primitive: "softmax_cross_entropy", set: s });
            }
            if labels[s] >= set.len() || set.iter().any(|&i| i >= n) {
                return Err(shape_err("softmax_cross_entropy", format!("set {s} label or index out of range")));
            }
            let m = set.iter().map(|&i| xv[i]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = set.iter().map(|&i| (xv[i] - m).exp()).sum();
            loss += m + z.ln() - xv[set[labels[s]]];
            probs.extend(set.iter().map(|&i| (xv[i] - m).exp() / z));
        }
        self.push(
            "softmax_cross_entropy",
            vec![loss],
            Op::SoftmaxXent { logits, sets: sets.clone(), labels: labels.clone(), probs },
        )
    }

    /// Directional kernel response per edge:
    /// `A_e * sum_{b in bins(e)} sum_l w[b, l] * ((1 + cos(theta_e - theta_l)) / 2)^order`.
    ///
    /// `w` holds `bin_count * L` coefficients, bin-major. Reference directions
    /// come from a trainable `L`-vector or a fixed list.
    pub fn directional(
        &mut self,
        w: Var,
        theta_refs: Result<Var, Arc<[f64]>>,
        edges: &Arc<DirectionalEdges>,
        order: f64,
    ) -> Result<Var, AutodiffError> {
        let theta = match theta_refs {
            Ok(v) => Theta::Trainable(v),
            Err(fixed) => Theta::Fixed(fixed),
        };
        let refs: &[f64] = match &theta {
            Theta::Trainable(v) => self.value(*v),
            Theta::Fixed(f) => f,
        };
        let l = refs.len();
        if l == 0 || self.len_of(w) != edges.bin_count * l || edges.adjacency.len() != edges.len() {
            return Err(shape_err(
                "directional",
                format!("w {}, {} bins x {l} directions, {} edges", self.len_of(w), edges.bin_count, edges.len()),
            ));
        }
        let wv = self.value(w);
        let mut response = vec![0.0; edges.len() * l];
        let mut value = vec![0.0; edges.len()];
        for e in 0..edges.len() {
            let kr = &mut response[e * l..(e + 1) * l];
            for (k, &tl) in kr.iter_mut().zip(refs) {
                *k = ((1.0 + (edges.theta[e] - tl).cos()) / 2.0).powf(order);
            }
            let mut acc = 0.0;
            for b in edges.bins_of(e) {
                acc += wv[b * l..(b + 1) * l].iter().zip(kr.iter()).map(|(w, k)| w * k).sum::<f64>();
            }
            value[e] = edges.adjacency[e] * acc;
        }
        self.push("directional", value, Op::Directional { w, theta, edges: edges.clone(), order, response })
    }

    /// Reverse pass from the scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.len_of(loss) != 1 {
            return Err(AutodiffError::NonScalarLoss(self.len_of(loss)));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut adj, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            adj[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let slot = grads.slot(*id, g.len());
                for (s, x) in slot.iter_mut().zip(g) {
                    *s += x;
                }
            }
            Op::SpMv { pattern, matrix, x } => {
                let xv = self.value(*x);
                let mv = self.value(*matrix);
                let idx = pattern.indices();
                {
                    let gm = acc(adj, *matrix, pattern.nnz());
                    for r in 0..pattern.dim() {
                        for k in pattern.row(r) {
                            gm[k] += g[r] * xv[idx[k]];
                        }
                    }
                }
                let gx = acc(adj, *x, pattern.dim());
                for r in 0..pattern.dim() {
                    for k in pattern.row(r) {
                        gx[idx[k]] += g[r] * mv[k];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(adj, v, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += x);
                }
            }
            Op::AddScaled { a, b, scale } => {
                acc(adj, *a, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += x);
                acc(adj, *b, g.len()).iter_mut().zip(g).for_each(|(s, x)| *s += scale * x);
            }
            Op::Scale(x, s) => {
                acc(adj, *x, g.len()).iter_mut().zip(g).for_each(|(a, v)| *a += s * v);
            }
            Op::MulConst { x, factors } => {
                acc(adj, *x, g.len()).iter_mut().zip(g.iter().zip(factors.iter())).for_each(|(a, (v, f))| *a += v * f);
            }
            Op::ChannelMax { inputs, argmax } => {
                for (i, &c) in argmax.iter().enumerate() {
                    if g[i] != 0.0 {
                        acc(adj, inputs[c as usize], g.len())[i] += g[i];
                    }
                }
            }
            Op::SetMax { x, argmax } => {
                let n = self.len_of(*x);
                let gx = acc(adj, *x, n);
                for (s, &i) in argmax.iter().enumerate() {
                    gx[i] += g[s];
                }
            }
            Op::Gather { x, indices } => {
                let n = self.len_of(*x);
                let gx = acc(adj, *x, n);
                for (s, &i) in indices.iter().enumerate() {
                    gx[i] += g[s];
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.len_of(p);
                    acc(adj, p, len).iter_mut().zip(&g[off..off + len]).for_each(|(a, v)| *a += v);
                    off += len;
                }
            }
            Op::Affine { x, w, b, rows, inputs, outputs } => {
                let (rows, inputs, outputs) = (*rows, *inputs, *outputs);
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(b) = b {
                    let gb = acc(adj, *b, outputs);
                    for row in g.chunks_exact(outputs) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
                {
                    let gw = acc(adj, *w, inputs * outputs);
                    for r in 0..rows {
                        let gr = &g[r * outputs..(r + 1) * outputs];
                        for (i, &xi) in xv[r * inputs..(r + 1) * inputs].iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for (a, &go) in gw[i * outputs..(i + 1) * outputs].iter_mut().zip(gr) {
                                *a += xi * go;
                            }
                        }
                    }
                }
                if matches!(self.nodes[x.0].op, Op::Input) {
                    return;
                }
                let gx = acc(adj, *x, rows * inputs);
                for r in 0..rows {
                    let gr = &g[r * outputs..(r + 1) * outputs];
                    for i in 0..inputs {
                        gx[r * inputs + i] += wv[i * outputs..(i + 1) * outputs].iter().zip(gr).map(|(w, v)| w * v).sum::<f64>();
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = acc(adj, *x, g.len());
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Conv2d { x, w, b, shape } => {
                let ConvShape { in_channels: ci, out_channels: co, height: h, width: wd, kernel: k } = *shape;
                let (xv, wv) = (self.value(*x), self.value(*w));
                let half = (k / 2) as isize;
                if let Some(b) = b {
                    let gb = acc(adj, *b, co);
                    for o in 0..co {
                        gb[o] += g[o * h * wd..(o + 1) * h * wd].iter().sum::<f64>();
                    }
                }
                let need_x = !matches!(self.nodes[x.0].op, Op::Input);
                let mut gw = vec![0.0; co * ci * k * k];
                let mut gx = vec![0.0; if need_x { ci * h * wd } else { 0 }];
                for o in 0..co {
                    for r in 0..h {
                        for c in 0..wd {
                            let go = g[(o * h + r) * wd + c];
                            if go == 0.0 {
                                continue;
                            }
                            for i in 0..ci {
                                for kr in 0..k {
                                    let rr = r as isize + kr as isize - half;
                                    if rr < 0 || rr >= h as isize {
                                        continue;
                                    }
                                    for kc in 0..k {
                                        let cc = c as isize + kc as isize - half;
                                        if cc < 0 || cc >= wd as isize {
                                            continue;
                                        }
                                        let xi = (i * h + rr as usize) * wd + cc as usize;
                                        let wi = ((o * ci + i) * k + kr) * k + kc;
                                        gw[wi] += go * xv[xi];
                                        if need_x {
                                            gx[xi] += go * wv[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                acc(adj, *w, gw.len()).iter_mut().zip(&gw).for_each(|(a, v)| *a += v);
                if need_x {
                    acc(adj, *x, gx.len()).iter_mut().zip(&gx).for_each(|(a, v)| *a += v);
                }
            }
            Op::Sum(x) => {
                let n = self.len_of(*x);
                acc(adj, *x, n).iter_mut().for_each(|a| *a += g[0]);
            }
            Op::SquaredError { pred, target } => {
                let pv = self.value(*pred);
                let gp = acc(adj, *pred, pv.len());
                for i in 0..pv.len() {
                    gp[i] += g[0] * 2.0 * (pv[i] - target[i]);
                }
            }
            Op::SoftmaxXent { logits, sets, labels, probs } => {
                let n = self.len_of(*logits);
                let gl = acc(adj, *logits, n);
                let mut k = 0;
                for (s, set) in sets.iter().enumerate() {
                    for (j, &i) in set.iter().enumerate() {
                        let target = if j == labels[s] { 1.0 } else { 0.0 };
                        gl[i] += g[0] * (probs[k] - target);
                        k += 1;
                    }
                }
            }
            Op::Directional { w, theta, edges, order, response } => {
                let refs: &[f64] = match theta {
                    Theta::Trainable(v) => self.value(*v),
                    Theta::Fixed(f) => f,
                };
                let l = refs.len();
                let wv = self.value(*w);
                let mut gw = vec![0.0; wv.len()];
                let mut gt = vec![0.0; l];
                let trainable = matches!(theta, Theta::Trainable(_));
                for e in 0..edges.len() {
                    let ge = g[e] * edges.adjacency[e];
                    if ge == 0.0 {
                        continue;
                    }
                    let kr = &response[e * l..(e + 1) * l];
                    for b in edges.bins_of(e) {
                        gw[b * l..(b + 1) * l].iter_mut().zip(kr).for_each(|(a, k)| *a += ge * k);
                    }
                    if trainable {
                        for (j, &tl) in refs.iter().enumerate() {
                            let wsum: f64 = edges.bins_of(e).map(|b| wv[b * l + j]).sum();
                            let delta = edges.theta[e] - tl;
                            let base = (1.0 + delta.cos()) / 2.0;
                            // d/d theta_l of base^t = t * base^(t-1) * sin(delta) / 2
                            let dk = order * base.powf(order - 1.0) * delta.sin() / 2.0;
                            gt[j] += ge * wsum * dk;
                        }
                    }
                }
                acc(adj, *w, gw.len()).iter_mut().zip(&gw).for_each(|(a, v)| *a += v);
                if let Theta::Trainable(tv) = theta {
                    acc(adj, *tv, l).iter_mut().zip(&gt).for_each(|(a, v)| *a += v);
                }
            }
        }
    }
}
