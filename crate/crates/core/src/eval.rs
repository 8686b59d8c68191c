//! Shortest-path oracles, planning metrics and dataset directories.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, GraphError, NodeId, PlanningInstance, SpatialGraph, World};
use crate::model::{Gvin, ModelError};
use crate::par::{self, Execution};
use crate::planner::{self, Outcome};
use crate::training::RewardScheme;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("goal {goal} is unreachable from {start}")]
    Unreachable { start: NodeId, goal: NodeId },
    #[error("no instances to evaluate")]
    Empty,
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {message}")]
    Dataset { path: String, message: String },
}

impl From<planner::PlanError> for EvalError {
    fn from(e: planner::PlanError) -> Self {
        EvalError::Model(e.into())
    }
}

/// Edge cost used by the oracles and by path-length comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    Hops,
    #[default]
    Euclidean,
    /// Euclidean length divided by the edge weight.
    DistOverWeight,
}

impl CostModel {
    pub fn edge_cost(self, graph: &SpatialGraph, u: NodeId, v: NodeId, w: f64) -> f64 {
        match self {
            CostModel::Hops => 1.0,
            CostModel::Euclidean => graph.distance(u, v),
            CostModel::DistOverWeight => graph.distance(u, v) / w,
        }
    }

    /// Lower bound on the cost of one unit of straight-line distance.
    fn heuristic_scale(self, graph: &SpatialGraph) -> f64 {
        match self {
            CostModel::Hops => {
                let longest = graph.edges().map(|(u, v, _)| graph.distance(u, v)).fold(0.0, f64::max);
                if longest > 0.0 {
                    1.0 / longest
                } else {
                    0.0
                }
            }
            CostModel::Euclidean => 1.0,
            CostModel::DistOverWeight => {
                let heaviest = graph.weights().iter().copied().fold(0.0, f64::max);
                if heaviest > 0.0 {
                    1.0 / heaviest
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for CostModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hops" => Ok(CostModel::Hops),
            "euclidean" => Ok(CostModel::Euclidean),
            "dist_over_weight" => Ok(CostModel::DistOverWeight),
            other => Err(format!("unknown cost model {other:?}")),
        }
    }
}

/// An optimal start-to-goal path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub path: Vec<NodeId>,
    pub cost: f64,
}

impl OracleLabel {
    /// `(state, optimal next node)` for every non-goal state on the path.
    pub fn transitions(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.path.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    node: NodeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on key, then on node id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn reversed(graph: &SpatialGraph) -> Vec<Vec<(NodeId, f64)>> {
    let mut rev = vec![Vec::new(); graph.node_count()];
    for (u, v, w) in graph.edges() {
        rev[v].push((u, w));
    }
    rev
}

/// Cost-to-goal of every node, by Dijkstra over reversed edges. Unreachable
/// nodes get `+inf`.
pub fn cost_to_goal(graph: &SpatialGraph, goal: NodeId, cost: CostModel) -> Vec<f64> {
    let rev = reversed(graph);
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut done = vec![false; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[goal] = 0.0;
    heap.push(Entry { key: 0.0, node: goal });
    while let Some(Entry { node: v, .. }) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &(u, w) in &rev[v] {
            let d = cost.edge_cost(graph, u, v, w) + dist[v];
            if d < dist[u] {
                dist[u] = d;
                heap.push(Entry { key: d, node: u });
            }
        }
    }
    dist
}

/// Walks from `start` along lowest-id neighbors that keep the cost-to-goal
/// exact.
fn extract_path(graph: &SpatialGraph, dist: &[f64], start: NodeId, goal: NodeId, cost: CostModel) -> Vec<NodeId> {
    let mut path = vec![start];
    let mut u = start;
    while u != goal {
        let (ids, ws) = graph.neighbor_slices(u);
        u = ids
            .iter()
            .zip(ws)
            .find(|&(&v, &w)| dist[v] + cost.edge_cost(graph, u, v, w) == dist[u])
            .map(|(&v, _)| v)
            .expect("a finite cost-to-goal has a witness neighbor");
        path.push(u);
    }
    path
}

/// Dijkstra-optimal path under `cost`, ties toward lower node ids.
pub fn shortest_path_oracle(instance: &PlanningInstance, cost: CostModel) -> Result<OracleLabel, EvalError> {
    let g = &instance.graph;
    let dist = cost_to_goal(g, instance.goal, cost);
    if !dist[instance.start].is_finite() {
        return Err(EvalError::Unreachable { start: instance.start, goal: instance.goal });
    }
    let path = extract_path(g, &dist, instance.start, instance.goal, cost);
    Ok(OracleLabel { path, cost: dist[instance.start] })
}

/// A* from the start with a straight-line heuristic. Returns an optimal path,
/// which may differ from the Dijkstra path on ties; use it on large graphs
/// where only the cost matters.
pub fn astar_oracle(instance: &PlanningInstance, cost: CostModel) -> Result<OracleLabel, EvalError> {
    let g = &instance.graph;
    let (start, goal) = (instance.start, instance.goal);
    let scale = cost.heuristic_scale(g);
    let h = |u: NodeId| g.distance(u, goal) * scale;
    let n = g.node_count();
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[start] = 0.0;
    heap.push(Entry { key: h(start), node: start });
    while let Some(Entry { node: u, .. }) = heap.pop() {
        if closed[u] {
            continue;
        }
        closed[u] = true;
        if u == goal {
            break;
        }
        let (ids, ws) = g.neighbor_slices(u);
        for (&v, &w) in ids.iter().zip(ws) {
            let d = best[u] + cost.edge_cost(g, u, v, w);
            if d < best[v] {
                best[v] = d;
                parent[v] = u;
                heap.push(Entry { key: d + h(v), node: v });
            }
        }
    }
    if !best[goal].is_finite() {
        return Err(EvalError::Unreachable { start, goal });
    }
    let mut path = vec![goal];
    while *path.last().unwrap() != start {
        path.push(parent[*path.last().unwrap()]);
    }
    path.reverse();
    let cost_value = path_cost(g, &path, cost);
    Ok(OracleLabel { path, cost: cost_value })
}

/// Cost of a node sequence, summed from the goal end.
pub fn path_cost(graph: &SpatialGraph, path: &[NodeId], cost: CostModel) -> f64 {
    path.windows(2).rev().fold(0.0, |acc, w| {
        let weight = graph.weight(w[0], w[1]).expect("consecutive path nodes are adjacent");
        cost.edge_cost(graph, w[0], w[1], weight) + acc
    })
}

/// Options shared by every evaluation entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub t_max: Option<usize>,
    pub cost: CostModel,
    pub rewards: RewardScheme,
    pub execution: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { t_max: None, cost: CostModel::Euclidean, rewards: RewardScheme::default(), execution: Execution::Parallel }
    }
}

/// Per-instance evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub matched: usize,
    pub labeled: usize,
    pub outcome: Outcome,
    pub path: Vec<NodeId>,
    /// `(rollout cost - oracle cost) / oracle cost` when the goal was reached.
    pub relative_excess: Option<f64>,
    pub reward: f64,
}

/// The four planning metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub prediction_accuracy: f64,
    pub success_rate: f64,
    /// Mean relative excess cost over successful rollouts; 0 when none
    /// succeeded.
    pub path_difference: f64,
    pub expected_reward: f64,
    pub instances: usize,
    pub labeled_states: usize,
    pub successes: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "prediction_accuracy,success_rate,path_difference,expected_reward,instances,labeled_states,successes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.prediction_accuracy,
            self.success_rate,
            self.path_difference,
            self.expected_reward,
            self.instances,
            self.labeled_states,
            self.successes
        )
    }

    /// Aggregates per-instance results in order.
    pub fn from_results(results: &[InstanceResult]) -> Result<Self, EvalError> {
        if results.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = results.len();
        let matched: usize = results.iter().map(|r| r.matched).sum();
        let labeled: usize = results.iter().map(|r| r.labeled).sum();
        let excess: Vec<f64> = results.iter().filter_map(|r| r.relative_excess).collect();
        let successes = results.iter().filter(|r| r.outcome == Outcome::Reached).count();
        Ok(Self {
            prediction_accuracy: if labeled == 0 { 0.0 } else { matched as f64 / labeled as f64 },
            success_rate: successes as f64 / n as f64,
            path_difference: if excess.is_empty() { 0.0 } else { excess.iter().sum::<f64>() / excess.len() as f64 },
            expected_reward: results.iter().map(|r| r.reward).sum::<f64>() / n as f64,
            instances: n,
            labeled_states: labeled,
            successes,
        })
    }
}

/// Undiscounted environment reward of a greedy rollout.
pub fn rollout_reward(steps: usize, outcome: Outcome, rewards: &RewardScheme) -> f64 {
    let mut total = steps as f64 * rewards.step;
    match outcome {
        Outcome::Reached => total += rewards.goal,
        Outcome::HitObstacle => total += rewards.step + rewards.obstacle,
        Outcome::BudgetExhausted => {}
    }
    total
}

/// Evaluates one instance; `label` of `None` skips prediction accuracy and
/// path difference.
pub fn evaluate_instance(
    model: &Gvin,
    instance: &PlanningInstance,
    label: Option<&OracleLabel>,
    opts: &EvalOptions,
) -> Result<InstanceResult, EvalError> {
    let prepared = model.prepare_instance(instance)?;
    let values = model.plan(&prepared, instance.goal)?;
    let readout = model.spec.readout;
    let mut matched = 0;
    let mut labeled = 0;
    if let Some(label) = label {
        if label.path.first() != Some(&instance.start) || label.path.last() != Some(&instance.goal) {
            return Err(EvalError::Mismatch("label does not match instance endpoints".into()));
        }
        for (s, next) in label.transitions() {
            labeled += 1;
            if planner::greedy_step(instance, &values, readout, s)? == Some(next) {
                matched += 1;
            }
        }
    }
    let t_max = opts.t_max.unwrap_or_else(|| planner::default_t_max(instance));
    let roll = planner::rollout(instance, &values, t_max, readout)?;
    let relative_excess = match (label, roll.outcome) {
        (Some(label), Outcome::Reached) if label.cost > 0.0 => {
            Some((path_cost(&instance.graph, &roll.path, opts.cost) - label.cost) / label.cost)
        }
        _ => None,
    };
    Ok(InstanceResult {
        matched,
        labeled,
        outcome: roll.outcome,
        reward: rollout_reward(roll.steps(), roll.outcome, &opts.rewards),
        path: roll.path,
        relative_excess,
    })
}

/// Metrics over a set of instances, evaluated concurrently and aggregated
/// in instance order.
pub fn compute_metrics(
    model: &Gvin,
    instances: &[PlanningInstance],
    labels: Option<&[OracleLabel]>,
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    if let Some(l) = labels {
        if l.len() != instances.len() {
            return Err(EvalError::Mismatch(format!("{} labels for {} instances", l.len(), instances.len())));
        }
    }
    let results = par::map(opts.execution, instances, |i, inst| {
        evaluate_instance(model, inst, labels.map(|l| &l[i]), opts)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    MetricsReport::from_results(&results)
}

/// Oracle labels for every instance, computed concurrently.
pub fn label_all(
    instances: &[PlanningInstance],
    cost: CostModel,
    exec: Execution,
) -> Result<Vec<OracleLabel>, EvalError> {
    par::map(exec, instances, |_, inst| shortest_path_oracle(inst, cost)).into_iter().collect()
}

/// A directory of graph files plus a list of start/goal queries.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// File name (relative to `graphs/`) and contents.
    pub worlds: Vec<(String, World)>,
    pub queries: Vec<Query>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub graph_file: String,
    pub start: NodeId,
    pub goal: NodeId,
}

impl Dataset {
    /// One query per world at the given endpoints.
    pub fn from_instances(instances: &[PlanningInstance]) -> Self {
        let mut worlds = Vec::new();
        let mut queries = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            let name = format!("{i:05}.json");
            let world = match &inst.maze {
                Some(m) => World::Maze(m.as_ref().clone()),
                None => World::Graph(inst.graph.as_ref().clone()),
            };
            worlds.push((name.clone(), world));
            queries.push(Query { graph_file: name, start: inst.start, goal: inst.goal });
        }
        Self { worlds, queries }
    }

    /// Planning instances for every query; worlds are shared between
    /// queries that name the same file.
    pub fn instances(&self) -> Result<Vec<PlanningInstance>, EvalError> {
        let shared: Vec<(&str, PlanningInstance)> = self
            .worlds
            .iter()
            .map(|(name, world)| {
                let template = match world {
                    World::Graph(g) => PlanningInstance {
                        graph: Arc::new(g.clone()),
                        maze: None,
                        start: 0,
                        goal: 0,
                    },
                    World::Maze(m) => PlanningInstance::from_maze(Arc::new(m.clone())),
                };
                (name.as_str(), template)
            })
            .collect();
        self.queries
            .iter()
            .map(|q| {
                let template = shared
                    .iter()
                    .find(|(name, _)| *name == q.graph_file)
                    .map(|(_, t)| t)
                    .ok_or_else(|| EvalError::Mismatch(format!("query names unknown graph {}", q.graph_file)))?;
                Ok(template.with_endpoints(q.start, q.goal)?)
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        let graphs = dir.join("graphs");
        std::fs::create_dir_all(&graphs).map_err(|e| io_err(&graphs, e))?;
        for (name, world) in &self.worlds {
            graph::save_world(world, graphs.join(name))?;
        }
        let path = dir.join("instances.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for q in &self.queries {
            w.serialize(q).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EvalError> {
        let dir = dir.as_ref();
        let graphs = dir.join("graphs");
        let mut names: Vec<PathBuf> = std::fs::read_dir(&graphs)
            .map_err(|e| io_err(&graphs, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        let mut worlds = Vec::with_capacity(names.len());
        for p in names {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            worlds.push((name, graph::load_world(&p)?));
        }
        let path = dir.join("instances.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let queries = r
            .deserialize()
            .collect::<Result<Vec<Query>, _>>()
            .map_err(|e| csv_err(&path, e))?;
        Ok(Self { worlds, queries })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> EvalError {
    EvalError::Dataset { path: path.display().to_string(), message: e.to_string() }
}

fn csv_err(path: &Path, e: csv::Error) -> EvalError {
    EvalError::Dataset { path: path.display().to_string(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Arc<SpatialGraph> {
        Arc::new(
            SpatialGraph::new(vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]], &[(0, 1, 1.0), (1, 2, 1.0)], false).unwrap(),
        )
    }

    #[test]
    fn oracle_on_path_and_triangle() {
        let inst = PlanningInstance::new(path3(), 0, 2).unwrap();
        let label = shortest_path_oracle(&inst, CostModel::Hops).unwrap();
        assert_eq!((label.path, label.cost), (vec![0, 1, 2], 2.0));

        let tri = Arc::new(
            SpatialGraph::new(
                vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]],
                &[(0, 1, 1.0), (0, 2, 1.0), (2, 1, 1.0)],
                false,
            )
            .unwrap(),
        );
        let label = shortest_path_oracle(&PlanningInstance::new(tri, 0, 1).unwrap(), CostModel::Euclidean).unwrap();
        assert_eq!(label.path, vec![0, 1]);
    }

    #[test]
    fn unreachable_goal_is_an_error() {
        let g = Arc::new(SpatialGraph::new(vec![[0.0, 0.0], [1.0, 0.0]], &[(0, 1, 1.0)], true).unwrap());
        let inst = PlanningInstance::new(g, 1, 0).unwrap();
        assert!(matches!(shortest_path_oracle(&inst, CostModel::Hops), Err(EvalError::Unreachable { .. })));
    }

    #[test]
    fn weighted_cost_prefers_heavy_edges() {
        let g = Arc::new(
            SpatialGraph::new(
                vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.1]],
                &[(0, 1, 0.5), (0, 2, 10.0), (2, 1, 10.0)],
                false,
            )
            .unwrap(),
        );
        let inst = PlanningInstance::new(g, 0, 1).unwrap();
        assert_eq!(shortest_path_oracle(&inst, CostModel::DistOverWeight).unwrap().path, vec![0, 2, 1]);
        assert_eq!(shortest_path_oracle(&inst, CostModel::Euclidean).unwrap().path, vec![0, 1]);
    }

    #[test]
    fn astar_matches_dijkstra_cost() {
        for seed in 0..20 {
            let g = Arc::new(graph::generate_geometric(40, 0.3, seed).unwrap());
            let inst = PlanningInstance::new(g, 0, 39).unwrap();
            for cost in [CostModel::Hops, CostModel::Euclidean] {
                let a = astar_oracle(&inst, cost).unwrap().cost;
                let d = shortest_path_oracle(&inst, cost).unwrap().cost;
                assert!((a - d).abs() <= 1e-12 * d.max(1.0), "{a} vs {d}");
            }
        }
    }

    fn result(matched: usize, labeled: usize, outcome: Outcome, excess: Option<f64>, reward: f64) -> InstanceResult {
        InstanceResult { matched, labeled, outcome, path: vec![], relative_excess: excess, reward }
    }

    #[test]
    fn metric_counting() {
        let rs = vec![
            result(10, 10, Outcome::Reached, Some(0.0), 0.96),
            result(9, 10, Outcome::Reached, Some(0.2), 0.9),
            result(0, 0, Outcome::Reached, Some(0.1), 0.9),
            result(0, 0, Outcome::BudgetExhausted, None, -0.4),
        ];
        let m = MetricsReport::from_results(&rs).unwrap();
        assert_eq!(m.prediction_accuracy, 0.95);
        assert_eq!(m.success_rate, 0.75);
        assert!((m.path_difference - 0.1).abs() < 1e-15);
        assert!(MetricsReport::from_results(&[]).is_err());
        let r = rollout_reward(4, Outcome::Reached, &RewardScheme::default());
        assert!((r - 0.96).abs() < 1e-15);
    }
}
