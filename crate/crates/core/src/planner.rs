//! The planning forward pass: reward extraction, the value-iteration
//! recurrence over graph convolution operators, pseudo action-values and
//! greedy rollouts.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ConvShape, CsrPattern, ParamStore, Tape, Var};
use crate::graph::{MazeWorld, NodeId, PlanningInstance, SpatialGraph};
use crate::kernels::TransitionOperator;
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("value iteration diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("node {0} has no neighbors")]
    DeadEnd(NodeId),
    #[error("{0}")]
    Mode(String),
    #[error("operator/signal mismatch: {0}")]
    Shape(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Recurrence depth, channel count and discount of the planner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VIConfig {
    pub k: usize,
    pub channels: usize,
    pub gamma: f64,
}

impl Default for VIConfig {
    fn default() -> Self {
        Self { k: 40, channels: 10, gamma: 0.99 }
    }
}

impl VIConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.k == 0 || self.channels == 0 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PlanError::Mode(format!("invalid VI config {self:?}")));
        }
        Ok(())
    }
}

/// How the goal indicator becomes a reward signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RewardMode {
    Identity,
    /// Two 3x3 convolution layers over the (obstacle, goal) image of a maze:
    /// `hidden_channels` kernels, then a single output kernel.
    ConvNet { hidden_channels: usize },
}

/// Centre of a 3x3 kernel, and of the goal-channel kernel of hidden
/// channel 0 in `[out, in, 3, 3]` layout.
const CENTER_TAP: usize = 4;
const GOAL_CENTER_TAP: usize = 9 + CENTER_TAP;

impl RewardMode {
    pub fn register(&self, store: &mut ParamStore, init_std: f64, rng: &mut Rng) {
        if let RewardMode::ConvNet { hidden_channels: c } = *self {
            let normal = Normal::new(0.0, init_std).expect("finite std");
            let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| normal.sample(rng)).collect() };
            // Noise around the identity stencil, so the initial reward is
            // the goal map. From a zero-mean start the sign of the reward
            // near the goal is arbitrary, and a negative one pulls the
            // kernels into a sign-flipped optimum that max-pooling cannot
            // turn into value iteration.
            let mut w1 = draw(c * 18);
            w1[GOAL_CENTER_TAP] += 1.0;
            let mut w2 = draw(c * 9);
            w2[CENTER_TAP] += 1.0;
            store.add("reward.conv1.w", vec![c, 2, 3, 3], w1);
            store.add("reward.conv1.b", vec![c], vec![0.0; c]);
            store.add("reward.conv2.w", vec![1, c, 3, 3], w2);
            store.add("reward.conv2.b", vec![1], vec![0.0]);
        }
    }

    /// Records `r = f_R(g)` for `goal` on the tape.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        graph: &SpatialGraph,
        maze: Option<&MazeWorld>,
        goal: NodeId,
    ) -> Result<Var, PlanError> {
        match *self {
            RewardMode::Identity => {
                let mut g = vec![0.0; graph.node_count()];
                g[goal] = 1.0;
                Ok(tape.input(g)?)
            }
            RewardMode::ConvNet { hidden_channels: c } => {
                let maze = maze.ok_or_else(|| PlanError::Mode("conv_net reward requires a maze".into()))?;
                let (h, w) = (maze.rows(), maze.cols());
                let mut image = vec![0.0; 2 * h * w];
                for (cell, &blocked) in maze.obstacles().iter().enumerate() {
                    if blocked {
                        image[cell] = 1.0;
                    }
                }
                image[h * w + maze.cell_of_node(goal)] = 1.0;
                let id = |name: &str| params.id(name).ok_or_else(|| PlanError::MissingParameter(name.into()));
                let x = tape.input(image)?;
                let w1 = tape.param(params, id("reward.conv1.w")?)?;
                let b1 = tape.param(params, id("reward.conv1.b")?)?;
                let w2 = tape.param(params, id("reward.conv2.w")?)?;
                let b2 = tape.param(params, id("reward.conv2.b")?)?;
                let shape = ConvShape { in_channels: 2, out_channels: c, height: h, width: w, kernel: 3 };
                let hidden = tape.conv2d(x, w1, Some(b1), shape)?;
                let shape = ConvShape { in_channels: c, out_channels: 1, height: h, width: w, kernel: 3 };
                let r = tape.conv2d(hidden, w2, Some(b2), shape)?;
                let cells: Arc<[usize]> = maze.cells_of_nodes().into();
                Ok(tape.gather(r, &cells)?)
            }
        }
    }

    /// Reward signal without keeping a tape.
    pub fn extract(&self, params: &ParamStore, instance: &PlanningInstance) -> Result<Vec<f64>, PlanError> {
        let mut tape = Tape::new();
        let r = self.record(&mut tape, params, &instance.graph, instance.maze.as_deref(), instance.goal)?;
        Ok(tape.value(r).to_vec())
    }
}

/// Final state values, per-channel action values and pseudo action-values.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMap {
    pub v: Vec<f64>,
    pub q_channels: Vec<Vec<f64>>,
    /// `-inf` at nodes without neighbors (isolated maze cells).
    pub q_pseudo: Vec<f64>,
}

/// Runs `K` steps of `q_a = P_a (r + gamma v)`, `v = max_a q_a` from `v = 0`.
pub fn value_iterate(
    r: &[f64],
    operators: &TransitionOperator,
    graph: &SpatialGraph,
    cfg: &VIConfig,
) -> Result<ValueMap, PlanError> {
    cfg.validate()?;
    let n = operators.pattern.dim();
    if r.len() != n || graph.node_count() != n {
        return Err(PlanError::Shape(format!("signal {}, operator {n}, graph {}", r.len(), graph.node_count())));
    }
    if operators.channels.is_empty() {
        return Err(PlanError::Shape("no channels".into()));
    }
    let mut v = vec![0.0; n];
    let mut u = r.to_vec();
    let mut q = vec![vec![0.0; n]; operators.channels.len()];
    for iteration in 1..=cfg.k {
        for (qa, pa) in q.iter_mut().zip(&operators.channels) {
            operators.pattern.matvec(pa, &u, qa);
        }
        for i in 0..n {
            let mut m = q[0][i];
            for qa in &q[1..] {
                if qa[i] > m {
                    m = qa[i];
                }
            }
            if !m.is_finite() {
                return Err(PlanError::Divergence { iteration });
            }
            v[i] = m;
            u[i] = r[i] + cfg.gamma * m;
        }
    }
    let q_pseudo = pseudo_action_values_lenient(&v, graph);
    Ok(ValueMap { v, q_channels: q, q_pseudo })
}

/// Records the recurrence on a tape; returns `v_K` and the final per-channel
/// action values.
pub fn record_value_iteration(
    tape: &mut Tape,
    r: Var,
    pattern: &Arc<CsrPattern>,
    operators: &[Var],
    cfg: &VIConfig,
) -> Result<(Var, Vec<Var>), PlanError> {
    cfg.validate()?;
    let mut u = r;
    let mut out = None;
    for iteration in 1..=cfg.k {
        let q = operators
            .iter()
            .map(|&p| tape.spmv(pattern, p, u))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| divergence(e, iteration))?;
        let v = tape.channel_max(&q).map_err(|e| divergence(e, iteration))?;
        if iteration < cfg.k {
            u = tape.add_scaled(r, v, cfg.gamma).map_err(|e| divergence(e, iteration))?;
        }
        out = Some((v, q));
    }
    Ok(out.expect("k >= 1"))
}

fn divergence(e: AutodiffError, iteration: usize) -> PlanError {
    match e {
        AutodiffError::NonFinite { .. } => PlanError::Divergence { iteration },
        other => PlanError::Autodiff(other),
    }
}

/// `q_s = max over neighbors s' of v_{s'}`.
pub fn pseudo_action_values(v: &[f64], graph: &SpatialGraph) -> Result<Vec<f64>, PlanError> {
    (0..graph.node_count())
        .map(|s| best_neighbor(v, graph, s).map(|(_, val)| val))
        .collect()
}

/// Like [`pseudo_action_values`] but yields `-inf` for isolated nodes.
pub fn pseudo_action_values_lenient(v: &[f64], graph: &SpatialGraph) -> Vec<f64> {
    (0..graph.node_count())
        .map(|s| best_neighbor(v, graph, s).map_or(f64::NEG_INFINITY, |(_, val)| val))
        .collect()
}

/// Highest-valued neighbor of `s`, lowest id on ties.
pub fn best_neighbor(v: &[f64], graph: &SpatialGraph, s: NodeId) -> Result<(NodeId, f64), PlanError> {
    let ids = graph.neighbor_ids(s);
    let mut best: Option<(NodeId, f64)> = None;
    for &j in ids {
        if best.is_none_or(|(_, b)| v[j] > b) {
            best = Some((j, v[j]));
        }
    }
    best.ok_or(PlanError::DeadEnd(s))
}

/// How a greedy agent turns a value map into moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Move to the neighbor with the highest state value.
    #[default]
    NeighborValue,
    /// Take the compass direction of the channel with the highest action
    /// value at the current cell (mazes with 8 channels only).
    Compass,
}

/// Where a greedy rollout ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reached,
    BudgetExhausted,
    HitObstacle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub path: Vec<NodeId>,
    pub outcome: Outcome,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.path.len() - 1
    }
}

/// Greedy choice at `s`: `Ok(Some(next))`, or `Ok(None)` when a compass
/// readout points off the graph.
pub fn greedy_step(
    instance: &PlanningInstance,
    values: &ValueMap,
    readout: Readout,
    s: NodeId,
) -> Result<Option<NodeId>, PlanError> {
    match readout {
        Readout::NeighborValue => best_neighbor(&values.v, &instance.graph, s).map(|(j, _)| Some(j)),
        Readout::Compass => {
            let maze = instance
                .maze
                .as_ref()
                .ok_or_else(|| PlanError::Mode("compass readout requires a maze".into()))?;
            if values.q_channels.len() != 8 {
                return Err(PlanError::Mode(format!("compass readout needs 8 channels, got {}", values.q_channels.len())));
            }
            let mut best = 0;
            for a in 1..8 {
                if values.q_channels[a][s] > values.q_channels[best][s] {
                    best = a;
                }
            }
            Ok(maze.step(s, best))
        }
    }
}

/// Follows the greedy policy from the instance start for at most `t_max`
/// moves. Visited nodes are not masked.
pub fn rollout(
    instance: &PlanningInstance,
    values: &ValueMap,
    t_max: usize,
    readout: Readout,
) -> Result<Rollout, PlanError> {
    let mut path = vec![instance.start];
    let mut s = instance.start;
    for _ in 0..t_max {
        match greedy_step(instance, values, readout, s)? {
            None => return Ok(Rollout { path, outcome: Outcome::HitObstacle }),
            Some(next) => {
                path.push(next);
                s = next;
                if s == instance.goal {
                    return Ok(Rollout { path, outcome: Outcome::Reached });
                }
            }
        }
    }
    Ok(Rollout { path, outcome: Outcome::BudgetExhausted })
}

/// Default step budget: `4n` on graphs, `4 (rows + cols)` on mazes.
pub fn default_t_max(instance: &PlanningInstance) -> usize {
    match &instance.maze {
        Some(m) => 4 * (m.rows() + m.cols()),
        None => 4 * instance.graph.node_count(),
    }
}
