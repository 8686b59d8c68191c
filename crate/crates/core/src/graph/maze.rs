use std::sync::Arc;

use super::{GraphError, NodeId, SpatialGraph};

/// Compass offsets `(d_col, d_row)` in channel order.
///
/// Direction `a` points at angle `a * pi/4` counterclockwise from +x in
/// coordinate space, where x grows with the column and y with the row.
pub const COMPASS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// A grid maze. Free cells become graph nodes in row-major order and are
/// joined to their free 8-neighbors with unit weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeWorld {
    rows: usize,
    cols: usize,
    obstacles: Vec<bool>,
    start_cell: usize,
    goal_cell: usize,
    graph: Arc<SpatialGraph>,
    node_of_cell: Vec<Option<NodeId>>,
    cell_of_node: Vec<usize>,
}

impl MazeWorld {
    pub fn from_mask(
        rows: usize,
        cols: usize,
        obstacles: Vec<bool>,
        start_cell: usize,
        goal_cell: usize,
    ) -> Result<Self, GraphError> {
        if rows == 0 || cols == 0 || obstacles.len() != rows * cols {
            return Err(GraphError::InvalidArgument(format!(
                "obstacle mask of length {} does not match {rows}x{cols}",
                obstacles.len()
            )));
        }
        for (what, cell) in [("start", start_cell), ("goal", goal_cell)] {
            if cell >= rows * cols {
                return Err(GraphError::InvalidArgument(format!("{what} cell {cell} outside the grid")));
            }
            if obstacles[cell] {
                return Err(GraphError::InvalidArgument(format!("{what} cell {cell} is an obstacle")));
            }
        }
        if start_cell == goal_cell {
            return Err(GraphError::InvalidArgument("start equals goal".into()));
        }
        let mut node_of_cell = vec![None; rows * cols];
        let mut cell_of_node = Vec::new();
        let mut coords = Vec::new();
        for cell in 0..rows * cols {
            if !obstacles[cell] {
                node_of_cell[cell] = Some(cell_of_node.len());
                cell_of_node.push(cell);
                let (r, c) = (cell / cols, cell % cols);
                coords.push([(c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64]);
            }
        }
        let mut edges = Vec::new();
        for (u, &cell) in cell_of_node.iter().enumerate() {
            for dir in 0..8 {
                if let Some(v) = step_cell(rows, cols, cell, dir).and_then(|c| node_of_cell[c]) {
                    if u < v {
                        edges.push((u, v, 1.0));
                    }
                }
            }
        }
        let graph = Arc::new(SpatialGraph::new(coords, &edges, false)?);
        Ok(Self { rows, cols, obstacles, start_cell, goal_cell, graph, node_of_cell, cell_of_node })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn obstacles(&self) -> &[bool] {
        &self.obstacles
    }

    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<SpatialGraph> {
        self.graph.clone()
    }

    pub fn start_cell(&self) -> usize {
        self.start_cell
    }

    pub fn goal_cell(&self) -> usize {
        self.goal_cell
    }

    pub fn start_node(&self) -> NodeId {
        self.node_of_cell[self.start_cell].expect("start is free")
    }

    pub fn goal_node(&self) -> NodeId {
        self.node_of_cell[self.goal_cell].expect("goal is free")
    }

    pub fn node_of_cell(&self, cell: usize) -> Option<NodeId> {
        self.node_of_cell.get(cell).copied().flatten()
    }

    pub fn cell_of_node(&self, node: NodeId) -> usize {
        self.cell_of_node[node]
    }

    pub fn cells_of_nodes(&self) -> &[usize] {
        &self.cell_of_node
    }

    /// Node reached by moving from `node` in compass direction `dir`, or
    /// `None` when the move leaves the grid or enters an obstacle.
    pub fn step(&self, node: NodeId, dir: usize) -> Option<NodeId> {
        step_cell(self.rows, self.cols, self.cell_of_node[node], dir).and_then(|c| self.node_of_cell[c])
    }

    /// Compass direction from `from` to the adjacent node `to`.
    pub fn direction_between(&self, from: NodeId, to: NodeId) -> Option<usize> {
        (0..8).find(|&d| self.step(from, d) == Some(to))
    }

    /// Same obstacles, different endpoints.
    pub fn with_endpoints(&self, start_cell: usize, goal_cell: usize) -> Result<Self, GraphError> {
        Self::from_mask(self.rows, self.cols, self.obstacles.clone(), start_cell, goal_cell)
    }
}

pub(crate) fn step_cell(rows: usize, cols: usize, cell: usize, dir: usize) -> Option<usize> {
    let (dc, dr) = COMPASS[dir];
    let r = (cell / cols) as i64 + dr;
    let c = (cell % cols) as i64 + dc;
    if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
        None
    } else {
        Some(r as usize * cols + c as usize)
    }
}
