//! Graph convolution operators built from shift-invariant kernels.
//!
//! Each kernel maps a [`SpatialGraph`] and trainable parameters to one sparse
//! operator per channel. Operators keep the adjacency sparsity pattern
//! (plus the diagonal for the embedding kernel) and depend on coordinates
//! only through edge direction, edge length or coordinate differences, so
//! translating a graph never changes them.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    AutodiffError, CsrPattern, DirectionalEdges, IndexSets, ParamId, ParamStore, Tape, Var,
};
use crate::graph::{NodeId, SpatialGraph};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("edge ({0}, {1}) joins coincident points")]
    DegenerateEdge(NodeId, NodeId),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("invalid kernel configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Direction and length of every stored edge, in adjacency storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGeometry {
    /// Angle of `X_j - X_i` from +x, counterclockwise, in `[0, 2pi)`.
    pub theta: Vec<f64>,
    pub dist: Vec<f64>,
}

pub fn edge_geometry(graph: &SpatialGraph) -> Result<EdgeGeometry, KernelError> {
    let mut theta = Vec::with_capacity(graph.edge_count());
    let mut dist = Vec::with_capacity(graph.edge_count());
    for (u, v, _) in graph.edges() {
        let (a, b) = (graph.coord(u), graph.coord(v));
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let d = dx.hypot(dy);
        if d == 0.0 {
            return Err(KernelError::DegenerateEdge(u, v));
        }
        let mut t = dy.atan2(dx);
        if t < 0.0 {
            t += 2.0 * PI;
        }
        if t >= 2.0 * PI {
            t = 0.0;
        }
        theta.push(t);
        dist.push(d);
    }
    Ok(EdgeGeometry { theta, dist })
}

/// Hyperparameters of the directional kernel
/// `P_ij = A_ij * sum_l w_l * ((1 + cos(theta_ij - theta_l)) / 2)^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSpec {
    /// Number of reference directions `L`.
    pub directions: usize,
    /// Kernel order `t`.
    pub order: f64,
    /// Fixed references at `2 pi l / L` when true; trainable otherwise.
    pub direction_aware: bool,
}

impl Default for DirectionalSpec {
    fn default() -> Self {
        Self { directions: 8, order: 20.0, direction_aware: true }
    }
}

/// Directional kernel gated by distance bins. Every (bin, direction) pair
/// has its own coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSpec {
    #[serde(flatten)]
    pub directional: DirectionalSpec,
    pub bins: usize,
    /// Longest edge the bins must cover.
    pub d_max: f64,
}

impl SpatialSpec {
    /// Bin centers `(b + 1/2) * d_max / bins`, tiling `(0, d_max]`.
    pub fn d_refs(&self) -> Vec<f64> {
        let step = self.d_max / self.bins as f64;
        (0..self.bins).map(|b| (b as f64 + 0.5) * step).collect()
    }

    /// Half-window `eps`: half the bin spacing.
    pub fn eps(&self) -> f64 {
        self.d_max / self.bins as f64 / 2.0
    }
}

/// Multilayer-network kernel over coordinate differences with symmetric
/// degree normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub hidden: [usize; 2],
    /// Prefix the network input with the edge weight `A_ij`.
    pub include_edge_weight: bool,
    /// Normalize with `sum_k (1 + A_kj)` literally instead of `1 + deg_w`.
    #[serde(default)]
    pub eq7_literal: bool,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self { hidden: [32, 64], include_edge_weight: true, eq7_literal: false }
    }
}

impl EmbeddingSpec {
    pub fn input_dim(&self) -> usize {
        if self.include_edge_weight {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Directional(DirectionalSpec),
    Spatial(SpatialSpec),
    Embedding(EmbeddingSpec),
}

impl KernelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Directional(_) => "directional",
            KernelSpec::Spatial(_) => "spatial",
            KernelSpec::Embedding(_) => "embedding",
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let dir = match self {
            KernelSpec::Directional(d) => Some(d),
            KernelSpec::Spatial(s) => {
                if s.bins == 0 || !(s.d_max > 0.0) || !s.d_max.is_finite() {
                    return Err(KernelError::Config(format!("spatial bins {} / d_max {}", s.bins, s.d_max)));
                }
                Some(&s.directional)
            }
            KernelSpec::Embedding(e) => {
                if e.hidden.contains(&0) {
                    return Err(KernelError::Config("hidden layer of width 0".into()));
                }
                None
            }
        };
        if let Some(d) = dir {
            if d.directions == 0 || !(d.order > 0.0) {
                return Err(KernelError::Config(format!("L = {}, t = {}", d.directions, d.order)));
            }
        }
        Ok(())
    }

    /// Registers the parameters of `channels` operators, drawing kernel
    /// coefficients from `N(0, init_std^2)`.
    pub fn register(&self, store: &mut ParamStore, channels: usize, init_std: f64, rng: &mut Rng) {
        let normal = Normal::new(0.0, init_std).expect("finite std");
        let draw = |len: usize, rng: &mut Rng| -> Vec<f64> { (0..len).map(|_| normal.sample(rng)).collect() };
        for c in 0..channels {
            match self {
                KernelSpec::Directional(d) | KernelSpec::Spatial(SpatialSpec { directional: d, .. }) => {
                    let bins = match self {
                        KernelSpec::Spatial(s) => s.bins,
                        _ => 1,
                    };
                    let w = draw(bins * d.directions, rng);
                    store.add(format!("kernel.c{c}.w"), vec![bins, d.directions], w);
                    if !d.direction_aware {
                        let theta = (0..d.directions).map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
                        store.add(format!("kernel.c{c}.theta"), vec![d.directions], theta);
                    }
                }
                KernelSpec::Embedding(e) => {
                    let dims = [e.input_dim(), e.hidden[0], e.hidden[1], 1];
                    for layer in 0..3 {
                        let (i, o) = (dims[layer], dims[layer + 1]);
                        store.add(format!("kernel.c{c}.l{layer}.w"), vec![i, o], draw(i * o, rng));
                        store.add(format!("kernel.c{c}.l{layer}.b"), vec![o], vec![0.0; o]);
                    }
                }
            }
        }
    }

    /// Precomputes the graph-dependent, parameter-independent inputs.
    pub fn prepare(&self, graph: &SpatialGraph) -> Result<PreparedKernel, KernelError> {
        match self {
            KernelSpec::Directional(_) | KernelSpec::Spatial(_) => {
                let geom = edge_geometry(graph)?;
                let pattern = Arc::new(CsrPattern::new(
                    graph.node_count(),
                    graph.offsets().to_vec(),
                    graph.targets().to_vec(),
                ));
                let (bins, bin_count) = match self {
                    KernelSpec::Spatial(s) => {
                        let (refs, eps) = (s.d_refs(), s.eps());
                        let sets = IndexSets::from_sets(geom.dist.iter().map(|&d| {
                            refs.iter()
                                .enumerate()
                                .filter(move |(_, &r)| (d - r).abs() <= eps)
                                .map(|(b, _)| b)
                                .collect::<Vec<_>>()
                        }));
                        (Some(sets), s.bins)
                    }
                    _ => (None, 1),
                };
                let edges = DirectionalEdges {
                    theta: geom.theta,
                    adjacency: graph.weights().to_vec(),
                    bins,
                    bin_count,
                };
                Ok(PreparedKernel::Directional { pattern, edges: Arc::new(edges) })
            }
            KernelSpec::Embedding(e) => Ok(prepare_embedding(graph, e)),
        }
    }

    /// Records the operators of every channel on `tape`.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        prepared: &PreparedKernel,
        channels: usize,
    ) -> Result<Vec<Var>, KernelError> {
        let id = |name: String| params.id(&name).ok_or(KernelError::MissingParameter(name));
        let mut out = Vec::with_capacity(channels);
        match (self, prepared) {
            (
                KernelSpec::Directional(d) | KernelSpec::Spatial(SpatialSpec { directional: d, .. }),
                PreparedKernel::Directional { edges, .. },
            ) => {
                let fixed: Arc<[f64]> = fixed_directions(d.directions).into();
                for c in 0..channels {
                    let w = tape.param(params, id(format!("kernel.c{c}.w"))?)?;
                    let refs = if d.direction_aware {
                        Err(fixed.clone())
                    } else {
                        Ok(tape.param(params, id(format!("kernel.c{c}.theta"))?)?)
                    };
                    out.push(tape.directional(w, refs, edges, d.order)?);
                }
            }
            (KernelSpec::Embedding(e), PreparedKernel::Embedding { features, norm, .. }) => {
                let x = tape.input(features.to_vec())?;
                let dims = [e.input_dim(), e.hidden[0], e.hidden[1], 1];
                for c in 0..channels {
                    let mut h = x;
                    for layer in 0..3 {
                        let w: ParamId = id(format!("kernel.c{c}.l{layer}.w"))?;
                        let b: ParamId = id(format!("kernel.c{c}.l{layer}.b"))?;
                        let (w, b) = (tape.param(params, w)?, tape.param(params, b)?);
                        h = tape.affine(h, w, Some(b), dims[layer], dims[layer + 1])?;
                        if layer < 2 {
                            h = tape.relu(h)?;
                        }
                    }
                    out.push(tape.mul_const(h, norm)?);
                }
            }
            _ => return Err(KernelError::Config("prepared data belongs to another kernel family".into())),
        }
        Ok(out)
    }

    /// Evaluates the operators without keeping a tape.
    pub fn build(
        &self,
        params: &ParamStore,
        prepared: &PreparedKernel,
        channels: usize,
    ) -> Result<TransitionOperator, KernelError> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, params, prepared, channels)?;
        Ok(TransitionOperator {
            pattern: prepared.pattern().clone(),
            channels: vars.iter().map(|&v| tape.value(v).to_vec()).collect(),
        })
    }
}

/// `[0, 2pi/L, ..., 2pi(L-1)/L]`.
pub fn fixed_directions(l: usize) -> Vec<f64> {
    (0..l).map(|k| 2.0 * PI * k as f64 / l as f64).collect()
}

/// Parameter-independent kernel inputs for one graph.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedKernel {
    Directional {
        pattern: Arc<CsrPattern>,
        edges: Arc<DirectionalEdges>,
    },
    Embedding {
        pattern: Arc<CsrPattern>,
        /// Row-major network inputs, one row per stored entry.
        features: Arc<[f64]>,
        /// `(I_ij + A_ij) / sqrt(S_in(j) * S_out(i))` per stored entry.
        norm: Arc<[f64]>,
    },
}

impl PreparedKernel {
    pub fn pattern(&self) -> &Arc<CsrPattern> {
        match self {
            PreparedKernel::Directional { pattern, .. } | PreparedKernel::Embedding { pattern, .. } => pattern,
        }
    }
}

fn prepare_embedding(graph: &SpatialGraph, spec: &EmbeddingSpec) -> PreparedKernel {
    let n = graph.node_count();
    let in_strength = graph.in_strengths();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(graph.edge_count() + n);
    let mut features = Vec::with_capacity((graph.edge_count() + n) * spec.input_dim());
    let mut norm = Vec::with_capacity(graph.edge_count() + n);
    let literal_extra = if spec.eq7_literal { n as f64 } else { 1.0 };
    offsets.push(0);
    for i in 0..n {
        let out_i = literal_extra + graph.out_strength(i);
        let (ids, ws) = graph.neighbor_slices(i);
        let mut row: Vec<(usize, f64)> = ids.iter().copied().zip(ws.iter().copied()).collect();
        let at = row.partition_point(|&(j, _)| j < i);
        row.insert(at, (i, 0.0));
        let xi = graph.coord(i);
        for (j, a) in row {
            let xj = graph.coord(j);
            indices.push(j);
            if spec.include_edge_weight {
                features.push(a);
            }
            features.push(xi[0] - xj[0]);
            features.push(xi[1] - xj[1]);
            let indicator = if i == j { 1.0 } else { 0.0 };
            let in_j = literal_extra + in_strength[j];
            norm.push((indicator + a) / (in_j * out_i).sqrt());
        }
        offsets.push(indices.len());
    }
    PreparedKernel::Embedding {
        pattern: Arc::new(CsrPattern::new(n, offsets, indices)),
        features: features.into(),
        norm: norm.into(),
    }
}

/// One sparse operator per channel on a shared pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    pub pattern: Arc<CsrPattern>,
    pub channels: Vec<Vec<f64>>,
}

impl TransitionOperator {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn entry(&self, channel: usize, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.channels[channel][k])
    }

    /// Rows whose absolute sum exceeds `1 / gamma`, per channel. Such rows
    /// can make the value recurrence grow without bound.
    pub fn expansive_rows(&self, gamma: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (c, vals) in self.channels.iter().enumerate() {
            for r in 0..self.pattern.dim() {
                let s: f64 = self.pattern.row(r).map(|k| vals[k].abs()).sum();
                if s > 1.0 / gamma {
                    out.push((c, r));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::f64::consts::FRAC_PI_2;

    fn two_node(a: [f64; 2], b: [f64; 2]) -> SpatialGraph {
        SpatialGraph::new(vec![a, b], &[(0, 1, 1.0)], true).unwrap()
    }

    #[test]
    fn geometry_examples() {
        let g = edge_geometry(&two_node([0.0, 0.0], [1.0, 0.0])).unwrap();
        assert_eq!((g.theta[0], g.dist[0]), (0.0, 1.0));
        let g = edge_geometry(&two_node([0.0, 0.0], [0.0, 2.0])).unwrap();
        assert_eq!((g.theta[0], g.dist[0]), (FRAC_PI_2, 2.0));
        let g = edge_geometry(&two_node([0.0, 0.0], [-1.0, -1e-300])).unwrap();
        assert!(g.theta[0] < 2.0 * PI);
        let moved = edge_geometry(&two_node([0.3, -0.1], [0.3, 1.9])).unwrap();
        assert!((moved.theta[0] - FRAC_PI_2).abs() < 1e-15 && (moved.dist[0] - 2.0).abs() < 1e-15);
        assert_eq!(
            edge_geometry(&two_node([0.5, 0.5], [0.5, 0.5])),
            Err(KernelError::DegenerateEdge(0, 1))
        );
    }

    fn store_for(spec: &KernelSpec, channels: usize) -> ParamStore {
        let mut s = ParamStore::new();
        spec.register(&mut s, channels, 0.01, &mut rng::stream(0, 0));
        s
    }

    #[test]
    fn directional_single_reference() {
        let spec = KernelSpec::Directional(DirectionalSpec { directions: 1, order: 2.0, direction_aware: true });
        let mut s = store_for(&spec, 1);
        s.set_values("kernel.c0.w", vec![1.0]).unwrap();
        let g = two_node([0.0, 0.0], [0.0, 1.0]);
        let op = spec.build(&s, &spec.prepare(&g).unwrap(), 1).unwrap();
        assert!((op.entry(0, 0, 1) - 0.25).abs() < 1e-15);
        let g = two_node([0.0, 0.0], [1.0, 0.0]);
        let op = spec.build(&s, &spec.prepare(&g).unwrap(), 1).unwrap();
        assert_eq!(op.entry(0, 0, 1), 1.0);
    }

    #[test]
    fn spatial_outside_every_bin_is_zero() {
        let spec = KernelSpec::Spatial(SpatialSpec {
            directional: DirectionalSpec { directions: 2, order: 1.0, direction_aware: true },
            bins: 2,
            d_max: 0.4,
        });
        let mut s = store_for(&spec, 1);
        s.set_values("kernel.c0.w", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = two_node([0.0, 0.0], [0.9, 0.0]);
        let op = spec.build(&s, &spec.prepare(&g).unwrap(), 1).unwrap();
        assert_eq!(op.entry(0, 0, 1), 0.0);
        // exactly at the first bin center, aligned with reference 0
        let g = two_node([0.0, 0.0], [0.1, 0.0]);
        let op = spec.build(&s, &spec.prepare(&g).unwrap(), 1).unwrap();
        assert!((op.entry(0, 0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_normalization_two_nodes() {
        let spec = KernelSpec::Embedding(EmbeddingSpec { hidden: [4, 4], include_edge_weight: false, eq7_literal: false });
        let mut s = store_for(&spec, 1);
        // force the network output to 1 everywhere
        for layer in 0..3 {
            let name = format!("kernel.c0.l{layer}.w");
            let len = s.get(s.id(&name).unwrap()).len();
            s.set_values(&name, vec![0.0; len]).unwrap();
        }
        s.set_values("kernel.c0.l2.b", vec![1.0]).unwrap();
        let g = SpatialGraph::new(vec![[0.0, 0.0], [1.0, 0.0]], &[(0, 1, 1.0)], false).unwrap();
        let op = spec.build(&s, &spec.prepare(&g).unwrap(), 1).unwrap();
        assert!((op.entry(0, 0, 1) - 0.5).abs() < 1e-15);
        assert!((op.entry(0, 0, 0) - 0.5).abs() < 1e-15);

        let literal = KernelSpec::Embedding(EmbeddingSpec { eq7_literal: true, ..Default::default() });
        let PreparedKernel::Embedding { norm, .. } = literal.prepare(&g).unwrap() else { unreachable!() };
        // sum_k (1 + A_k1) = 2 + 1, sum_k (1 + A_0k) = 2 + 1
        assert!((norm[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn expansive_rows_flagged() {
        let op = TransitionOperator {
            pattern: Arc::new(CsrPattern::new(2, vec![0, 1, 2], vec![1, 0])),
            channels: vec![vec![2.0, 0.5]],
        };
        assert_eq!(op.expansive_rows(0.9), vec![(0, 0)]);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(KernelSpec::Directional(DirectionalSpec { directions: 0, ..Default::default() }).validate().is_err());
        assert!(KernelSpec::Spatial(SpatialSpec { directional: Default::default(), bins: 10, d_max: 0.0 })
            .validate()
            .is_err());
        assert!(KernelSpec::Embedding(EmbeddingSpec::default()).validate().is_ok());
    }
}
