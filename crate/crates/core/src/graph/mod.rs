//! Spatial graphs: 2D node embeddings plus a weighted sparse adjacency.

mod generate;
mod io;
mod maze;

use std::collections::VecDeque;
use std::sync::Arc;

use thiserror::Error;

pub use generate::{
    generate_geometric, generate_geometric_indexed, generate_geometric_weighted, generate_maze,
    generate_maze_indexed, MAX_GENERATION_ATTEMPTS,
};
pub use io::{load_graph, load_world, save_graph, save_maze, save_world, GraphFile, World};
pub use maze::{MazeWorld, COMPASS};

pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node {node} out of bounds for graph with {n} nodes")]
    NodeOutOfBounds { node: NodeId, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("edge ({u}, {v}) has non-positive weight {w}")]
    NonPositiveWeight { u: NodeId, v: NodeId, w: f64 },
    #[error("edge ({u}, {v}) listed twice with different weights")]
    ConflictingEdge { u: NodeId, v: NodeId },
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },
    #[error("parse error in {record}: {message}")]
    Parse { record: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A directed or undirected weighted graph whose nodes carry 2D coordinates.
///
/// Adjacency is stored row-compressed with every row sorted by neighbor id;
/// that order is the canonical tie-break order everywhere in the crate.
/// Undirected graphs store both orientations of every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    coords: Vec<[f64; 2]>,
    directed: bool,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    weights: Vec<f64>,
}

impl SpatialGraph {
    /// Builds a graph from coordinates and an edge list.
    ///
    /// For undirected graphs each edge may be given in one or both
    /// orientations; a repeated pair must carry the same weight.
    pub fn new(
        coords: Vec<[f64; 2]>,
        edges: &[(NodeId, NodeId, f64)],
        directed: bool,
    ) -> Result<Self, GraphError> {
        let n = coords.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if let Some(i) = coords.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(GraphError::NonFinite(format!("coordinates of node {i}")));
        }
        let mut list: Vec<(NodeId, NodeId, f64)> = Vec::with_capacity(edges.len() * 2);
        for &(u, v, w) in edges {
            for node in [u, v] {
                if node >= n {
                    return Err(GraphError::NodeOutOfBounds { node, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !w.is_finite() {
                return Err(GraphError::NonFinite(format!("weight of edge ({u}, {v})")));
            }
            if w <= 0.0 {
                return Err(GraphError::NonPositiveWeight { u, v, w });
            }
            list.push((u, v, w));
            if !directed {
                list.push((v, u, w));
            }
        }
        list.sort_by_key(|e| (e.0, e.1));
        let mut dedup: Vec<(NodeId, NodeId, f64)> = Vec::with_capacity(list.len());
        for e in list {
            match dedup.last() {
                Some(last) if last.0 == e.0 && last.1 == e.1 => {
                    if last.2.to_bits() != e.2.to_bits() {
                        return Err(GraphError::ConflictingEdge { u: e.0, v: e.1 });
                    }
                }
                _ => dedup.push(e),
            }
        }
        let mut offsets = vec![0usize; n + 1];
        for &(u, _, _) in &dedup {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = dedup.iter().map(|e| e.1).collect();
        let weights = dedup.iter().map(|e| e.2).collect();
        Ok(Self { coords, directed, offsets, targets, weights })
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Number of stored directed edges (twice the undirected edge count).
    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn coord(&self, node: NodeId) -> [f64; 2] {
        self.coords[node]
    }

    /// Row offsets of the compressed adjacency.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn check_node(&self, node: NodeId) -> Result<(), GraphError> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfBounds { node, n: self.node_count() })
        }
    }

    /// Out-neighbors of `node` with edge weights, ascending by id.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(NodeId, f64)>, GraphError> {
        self.check_node(node)?;
        let (ids, ws) = self.neighbor_slices(node);
        Ok(ids.iter().copied().zip(ws.iter().copied()).collect())
    }

    /// Neighbor ids of a node known to be valid.
    pub fn neighbor_ids(&self, node: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn neighbor_slices(&self, node: NodeId) -> (&[NodeId], &[f64]) {
        let range = self.offsets[node]..self.offsets[node + 1];
        (&self.targets[range.clone()], &self.weights[range])
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        let (ids, ws) = self.neighbor_slices(u);
        ids.binary_search(&v).ok().map(|k| ws[k])
    }

    /// All stored edges `(u, v, w)` in row-major canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            let (ids, ws) = self.neighbor_slices(u);
            ids.iter().zip(ws).map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Weighted out-degree `sum_k A_ik`.
    pub fn out_strength(&self, node: NodeId) -> f64 {
        self.neighbor_slices(node).1.iter().sum()
    }

    /// Weighted in-degree `sum_k A_ki` for every node.
    pub fn in_strengths(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.node_count()];
        for (_, v, w) in self.edges() {
            s[v] += w;
        }
        s
    }

    pub fn distance(&self, u: NodeId, v: NodeId) -> f64 {
        let (a, b) = (self.coords[u], self.coords[v]);
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    /// Nodes reachable from `source` along out-edges.
    pub fn reachable_from(&self, source: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbor_ids(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// True when every node is reachable from node 0 (weak sense is not
    /// checked for directed graphs; generators only build undirected ones).
    pub fn is_connected(&self) -> bool {
        self.reachable_from(0).iter().all(|&r| r)
    }

    /// Copy with every coordinate shifted by `t`.
    pub fn translated(&self, t: [f64; 2]) -> Self {
        let mut g = self.clone();
        for c in &mut g.coords {
            c[0] += t[0];
            c[1] += t[1];
        }
        g
    }

    pub fn with_coords(&self, coords: Vec<[f64; 2]>) -> Result<Self, GraphError> {
        if coords.len() != self.node_count() {
            return Err(GraphError::InvalidArgument("coordinate count mismatch".into()));
        }
        let edges: Vec<_> = self.edges().collect();
        Self::new(coords, &edges, self.directed)
    }
}

/// A start/goal query on a graph, optionally backed by a maze.
#[derive(Debug, Clone)]
pub struct PlanningInstance {
    pub graph: Arc<SpatialGraph>,
    pub maze: Option<Arc<MazeWorld>>,
    pub start: NodeId,
    pub goal: NodeId,
}

impl PlanningInstance {
    pub fn new(graph: Arc<SpatialGraph>, start: NodeId, goal: NodeId) -> Result<Self, GraphError> {
        graph.check_node(start)?;
        graph.check_node(goal)?;
        if start == goal {
            return Err(GraphError::InvalidArgument("start equals goal".into()));
        }
        Ok(Self { graph, maze: None, start, goal })
    }

    /// Instance over a maze using the maze's own start and goal cells.
    pub fn from_maze(maze: Arc<MazeWorld>) -> Self {
        Self {
            graph: maze.graph_arc(),
            start: maze.start_node(),
            goal: maze.goal_node(),
            maze: Some(maze),
        }
    }

    /// Same world, different endpoints.
    pub fn with_endpoints(&self, start: NodeId, goal: NodeId) -> Result<Self, GraphError> {
        let mut inst = Self::new(self.graph.clone(), start, goal)?;
        inst.maze = self.maze.clone();
        Ok(inst)
    }

    /// One-hot goal indicator over nodes.
    pub fn goal_signal(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.graph.node_count()];
        g[self.goal] = 1.0;
        g
    }
}
