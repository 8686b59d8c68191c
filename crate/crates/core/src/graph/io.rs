//! JSON graph and maze files.
//!
//! ```json
//! {"directed": false,
//!  "nodes": [{"id": 0, "x": 0.1, "y": 0.2}, ...],
//!  "edges": [{"u": 0, "v": 1, "w": 1.0}, ...]}
//! ```
//!
//! Maze files add `rows`, `cols`, `obstacles` (cell indices) and `goal`
//! (a cell index), plus an optional `start` cell. Undirected edges are written
//! once with `u < v`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphError, MazeWorld, SpatialGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub directed: bool,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// Either kind of environment a file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum World {
    Graph(SpatialGraph),
    Maze(MazeWorld),
}

impl World {
    pub fn graph(&self) -> &SpatialGraph {
        match self {
            World::Graph(g) => g,
            World::Maze(m) => m.graph(),
        }
    }
}

fn parse_err(record: impl Into<String>, message: impl Into<String>) -> GraphError {
    GraphError::Parse { record: record.into(), message: message.into() }
}

impl GraphFile {
    pub fn from_graph(graph: &SpatialGraph) -> Self {
        let nodes = graph
            .coords()
            .iter()
            .enumerate()
            .map(|(id, c)| NodeRecord { id, x: c[0], y: c[1] })
            .collect();
        let edges = graph
            .edges()
            .filter(|&(u, v, _)| graph.is_directed() || u < v)
            .map(|(u, v, w)| EdgeRecord { u, v, w })
            .collect();
        Self {
            directed: graph.is_directed(),
            nodes,
            edges,
            rows: None,
            cols: None,
            obstacles: None,
            goal: None,
            start: None,
        }
    }

    pub fn from_maze(maze: &MazeWorld) -> Self {
        let mut file = Self::from_graph(maze.graph());
        file.rows = Some(maze.rows());
        file.cols = Some(maze.cols());
        file.obstacles = Some((0..maze.obstacles().len()).filter(|&c| maze.obstacles()[c]).collect());
        file.goal = Some(maze.goal_cell());
        file.start = Some(maze.start_cell());
        file
    }

    /// Validates the records and builds the graph, normalizing coordinates.
    pub fn to_graph(&self) -> Result<SpatialGraph, GraphError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(parse_err("nodes", "empty node list"));
        }
        let mut coords = vec![None; n];
        for (k, rec) in self.nodes.iter().enumerate() {
            if rec.id >= n {
                return Err(parse_err(format!("node record {k}"), format!("id {} out of range 0..{n}", rec.id)));
            }
            if !rec.x.is_finite() || !rec.y.is_finite() {
                return Err(parse_err(format!("node record {k}"), "non-finite coordinate"));
            }
            if coords[rec.id].replace([rec.x, rec.y]).is_some() {
                return Err(parse_err(format!("node record {k}"), format!("duplicate id {}", rec.id)));
            }
        }
        let coords: Vec<[f64; 2]> = coords.into_iter().map(|c| c.expect("all ids seen")).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, rec) in self.edges.iter().enumerate() {
            let record = format!("edge record {k}");
            for node in [rec.u, rec.v] {
                if node >= n {
                    return Err(parse_err(record, format!("endpoint {node} does not exist ({n} nodes)")));
                }
            }
            if rec.u == rec.v {
                return Err(parse_err(record, format!("self-loop on node {}", rec.u)));
            }
            if !rec.w.is_finite() || rec.w <= 0.0 {
                return Err(parse_err(record, format!("weight {} must be finite and positive", rec.w)));
            }
            edges.push((rec.u, rec.v, rec.w));
        }
        SpatialGraph::new(normalize_coords(coords), &edges, self.directed)
            .map_err(|e| parse_err("edges", e.to_string()))
    }

    pub fn to_world(&self) -> Result<World, GraphError> {
        let graph = self.to_graph()?;
        let (rows, cols) = match (self.rows, self.cols) {
            (None, None) => return Ok(World::Graph(graph)),
            (Some(r), Some(c)) => (r, c),
            _ => return Err(parse_err("maze header", "rows and cols must both be present")),
        };
        let goal = self.goal.ok_or_else(|| parse_err("maze header", "missing goal cell"))?;
        let mut mask = vec![false; rows * cols];
        for (k, &cell) in self.obstacles.as_deref().unwrap_or(&[]).iter().enumerate() {
            if cell >= mask.len() {
                return Err(parse_err(format!("obstacle {k}"), format!("cell {cell} outside {rows}x{cols}")));
            }
            mask[cell] = true;
        }
        let start = match self.start {
            Some(s) => s,
            None => (0..mask.len())
                .find(|&c| !mask[c] && c != goal)
                .ok_or_else(|| parse_err("maze header", "no free start cell"))?,
        };
        let maze = MazeWorld::from_mask(rows, cols, mask, start, goal)
            .map_err(|e| parse_err("maze header", e.to_string()))?;
        if maze.graph() != &graph {
            return Err(parse_err("maze header", "node/edge lists disagree with the obstacle mask"));
        }
        Ok(World::Maze(maze))
    }
}

/// Leaves coordinates already inside the unit box untouched; otherwise shifts
/// the minimum corner to the origin and scales uniformly by the larger extent
/// so that angles are preserved.
fn normalize_coords(mut coords: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let inside = coords.iter().all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]));
    if inside {
        return coords;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &coords {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    for c in &mut coords {
        for k in 0..2 {
            c[k] = ((c[k] - lo[k]) * scale).clamp(0.0, 1.0);
        }
    }
    coords
}

fn read(path: &Path) -> Result<GraphFile, GraphError> {
    let text = fs::read_to_string(path)
        .map_err(|source| GraphError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| parse_err(path.display().to_string(), e.to_string()))
}

fn write(path: &Path, file: &GraphFile) -> Result<(), GraphError> {
    let text = serde_json::to_string(file).expect("graph records serialize");
    fs::write(path, text).map_err(|source| GraphError::Io { path: path.display().to_string(), source })
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<SpatialGraph, GraphError> {
    read(path.as_ref())?.to_graph()
}

pub fn load_world(path: impl AsRef<Path>) -> Result<World, GraphError> {
    read(path.as_ref())?.to_world()
}

pub fn save_graph(graph: &SpatialGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    write(path.as_ref(), &GraphFile::from_graph(graph))
}

pub fn save_maze(maze: &MazeWorld, path: impl AsRef<Path>) -> Result<(), GraphError> {
    write(path.as_ref(), &GraphFile::from_maze(maze))
}

pub fn save_world(world: &World, path: impl AsRef<Path>) -> Result<(), GraphError> {
    match world {
        World::Graph(g) => save_graph(g, path),
        World::Maze(m) => save_maze(m, path),
    }
}
