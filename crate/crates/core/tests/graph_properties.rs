use std::collections::{BTreeSet, VecDeque};

use gvin::graph::{
    generate_geometric_indexed, generate_geometric_weighted, generate_maze_indexed, load_world, save_world, World,
    COMPASS,
};
use proptest::prelude::*;

/// Breadth-first reachability over an explicit edge set.
fn reachable(n: usize, edges: &BTreeSet<(usize, usize)>, from: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &(_, v) in edges.range((u, 0)..(u + 1, 0)) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Flood fill over free grid cells with 8-connectivity.
fn flood(rows: usize, cols: usize, blocked: &[bool], from: usize) -> Vec<bool> {
    let mut seen = vec![false; rows * cols];
    seen[from] = true;
    let mut stack = vec![from];
    while let Some(c) = stack.pop() {
        let (r, col) = ((c / cols) as i64, (c % cols) as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, col + dc);
                if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let next = nr as usize * cols + nc as usize;
                if !blocked[next] && !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn geometric_edges_are_exactly_the_close_pairs(n in 2usize..30, radius in 0.3f64..0.9, seed in 0u64..1000) {
        let g = generate_geometric_indexed(n, radius, seed, 0).unwrap();
        let mut expected = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (g.coord(i), g.coord(j));
                if i != j && ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < radius {
                    expected.insert((i, j));
                }
            }
        }
        let stored: BTreeSet<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
        prop_assert_eq!(&stored, &expected);
        prop_assert!(g.edges().all(|(_, _, w)| w == 1.0));
        prop_assert!(g.coords().iter().all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1])));
        prop_assert!(reachable(n, &stored, 0).into_iter().all(|r| r));
    }

    #[test]
    fn weighted_graphs_are_symmetric_within_range(n in 2usize..20, seed in 0u64..1000) {
        let g = generate_geometric_weighted(n, 0.6, (0.5, 2.0), seed, 3).unwrap();
        for (i, j, w) in g.edges() {
            prop_assert!((0.5..2.0).contains(&w));
            prop_assert_eq!(g.weight(j, i), Some(w));
        }
    }

    #[test]
    fn maze_graph_matches_the_grid(rows in 3usize..9, cols in 3usize..9, density in 0.0f64..0.4, seed in 0u64..500) {
        let maze = generate_maze_indexed(rows, cols, density, seed, 1).unwrap();
        let g = maze.graph();
        let blocked = maze.obstacles();
        let free: Vec<usize> = (0..rows * cols).filter(|&c| !blocked[c]).collect();
        prop_assert_eq!(g.node_count(), free.len());
        for (node, &cell) in free.iter().enumerate() {
            prop_assert_eq!(maze.cell_of_node(node), cell);
            let (r, c) = (cell / cols, cell % cols);
            let xy = g.coord(node);
            prop_assert_eq!(xy, [(c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64]);
        }
        let mut expected = BTreeSet::new();
        for (a, &ca) in free.iter().enumerate() {
            for (b, &cb) in free.iter().enumerate() {
                let dr = (ca / cols) as i64 - (cb / cols) as i64;
                let dc = (ca % cols) as i64 - (cb % cols) as i64;
                if a != b && dr.abs() <= 1 && dc.abs() <= 1 {
                    expected.insert((a, b));
                }
            }
        }
        let stored: BTreeSet<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
        prop_assert_eq!(stored, expected);
        prop_assert!(flood(rows, cols, blocked, maze.start_cell())[maze.goal_cell()]);
        for node in 0..g.node_count() {
            for (d, (dc, dr)) in COMPASS.iter().enumerate() {
                let cell = maze.cell_of_node(node);
                let (r, c) = ((cell / cols) as i64 + dr, (cell % cols) as i64 + dc);
                let inside = r >= 0 && c >= 0 && r < rows as i64 && c < cols as i64;
                let target = inside.then(|| r as usize * cols + c as usize).and_then(|t| maze.node_of_cell(t));
                prop_assert_eq!(maze.step(node, d), target);
            }
        }
    }
}

#[test]
fn worlds_survive_a_json_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph = World::Graph(generate_geometric_weighted(12, 0.5, (0.5, 2.0), 4, 0).unwrap());
    let maze = World::Maze(generate_maze_indexed(6, 5, 0.3, 4, 0).unwrap());
    for (name, world) in [("g.json", graph), ("m.json", maze)] {
        let path = dir.path().join(name);
        save_world(&world, &path).unwrap();
        assert_eq!(load_world(&path).unwrap(), world);
    }
}
