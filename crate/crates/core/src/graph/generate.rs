//! Synthetic environments: random-obstacle mazes and random geometric graphs.

use std::collections::VecDeque;

use rand::Rng as _;

use super::maze::step_cell;
use super::{GraphError, MazeWorld, SpatialGraph};
use crate::rng::{self, Rng};

/// Resampling budget for both generators.
pub const MAX_GENERATION_ATTEMPTS: usize = 1000;

pub fn generate_maze(rows: usize, cols: usize, obstacle_density: f64, seed: u64) -> Result<MazeWorld, GraphError> {
    generate_maze_indexed(rows, cols, obstacle_density, seed, 0)
}

/// Maze `index` of the dataset seeded by `seed`.
///
/// Obstacles are placed i.i.d. with probability `obstacle_density`; start and
/// goal are drawn uniformly from the free cells. The draw is repeated until
/// start and goal share an 8-connected free component.
pub fn generate_maze_indexed(
    rows: usize,
    cols: usize,
    obstacle_density: f64,
    seed: u64,
    index: u64,
) -> Result<MazeWorld, GraphError> {
    if rows < 3 || cols < 3 {
        return Err(GraphError::InvalidArgument(format!("maze must be at least 3x3, got {rows}x{cols}")));
    }
    if !(0.0..1.0).contains(&obstacle_density) {
        return Err(GraphError::InvalidArgument(format!(
            "obstacle density {obstacle_density} outside [0, 1)"
        )));
    }
    let mut rng = rng::stream(seed, index);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mask: Vec<bool> = (0..rows * cols).map(|_| rng.gen::<f64>() < obstacle_density).collect();
        let free: Vec<usize> = (0..rows * cols).filter(|&c| !mask[c]).collect();
        if free.len() < 2 {
            continue;
        }
        let start = free[rng.gen_range(0..free.len() as u64) as usize];
        let goal = free[rng.gen_range(0..free.len() as u64) as usize];
        if start == goal || !cells_connected(rows, cols, &mask, start, goal) {
            continue;
        }
        return MazeWorld::from_mask(rows, cols, mask, start, goal);
    }
    Err(GraphError::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason: format!("no connected start/goal pair at density {obstacle_density}"),
    })
}

fn cells_connected(rows: usize, cols: usize, mask: &[bool], a: usize, b: usize) -> bool {
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([a]);
    seen[a] = true;
    while let Some(c) = queue.pop_front() {
        if c == b {
            return true;
        }
        for dir in 0..8 {
            if let Some(next) = step_cell(rows, cols, c, dir) {
                if !mask[next] && !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
    }
    false
}

pub fn generate_geometric(n: usize, radius: f64, seed: u64) -> Result<SpatialGraph, GraphError> {
    generate_geometric_indexed(n, radius, seed, 0)
}

/// Connected random geometric graph `index` of the dataset seeded by `seed`.
///
/// Nodes are uniform in the unit box and joined by a unit-weight undirected
/// edge when strictly closer than `radius`.
pub fn generate_geometric_indexed(n: usize, radius: f64, seed: u64, index: u64) -> Result<SpatialGraph, GraphError> {
    geometric_with(n, radius, seed, index, |_| 1.0)
}

/// As [`generate_geometric_indexed`] with edge weights drawn uniformly from
/// `[lo, hi)`.
pub fn generate_geometric_weighted(
    n: usize,
    radius: f64,
    weight_range: (f64, f64),
    seed: u64,
    index: u64,
) -> Result<SpatialGraph, GraphError> {
    let (lo, hi) = weight_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(GraphError::InvalidArgument(format!("bad weight range [{lo}, {hi})")));
    }
    geometric_with(n, radius, seed, index, |rng| lo + (hi - lo) * rng.gen::<f64>())
}

fn geometric_with(
    n: usize,
    radius: f64,
    seed: u64,
    index: u64,
    mut weight: impl FnMut(&mut Rng) -> f64,
) -> Result<SpatialGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(GraphError::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let mut rng = rng::stream(seed, index);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let d = (coords[v][0] - coords[u][0]).hypot(coords[v][1] - coords[u][1]);
                if d < radius && d > 0.0 {
                    edges.push((u, v, weight(&mut rng)));
                }
            }
        }
        let graph = SpatialGraph::new(coords, &edges, false)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(GraphError::GenerationFailed {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason: format!("no connected {n}-node graph at radius {radius}"),
    })
}
