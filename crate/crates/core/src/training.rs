//! Episodic Q-learning, the n-step Q-learning baseline and imitation
//! learning.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, CenteredRmsProp, Gradients, IndexSets, Tape, Var};
use crate::eval::{self, CostModel, EvalError, EvalOptions, OracleLabel};
use crate::graph::{NodeId, PlanningInstance};
use crate::model::{Gvin, ModelError, PreparedGraph, Recorded};
use crate::par::{self, Execution};
use crate::planner::{self, Outcome, PlanError, Readout, ValueMap};
use crate::rng::{self, Rng};

const SHUFFLE_TAG: u64 = 0x5b0f;
const EPISODE_TAG: u64 = 0xe915;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String, last_good: Box<Gvin> },
}

impl From<PlanError> for TrainError {
    fn from(e: PlanError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

impl TrainError {
    fn is_divergence(&self) -> bool {
        matches!(
            self,
            TrainError::Model(ModelError::Plan(PlanError::Divergence { .. }))
                | TrainError::Model(ModelError::Plan(PlanError::Autodiff(AutodiffError::NonFinite { .. })))
                | TrainError::Model(ModelError::Autodiff(
                    AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient(_)
                ))
                | TrainError::Model(ModelError::Kernel(crate::kernels::KernelError::Autodiff(
                    AutodiffError::NonFinite { .. }
                )))
        )
    }
}

/// Environment rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub goal: f64,
    pub obstacle: f64,
    pub step: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self { goal: 1.0, obstacle: -1.0, step: -0.01 }
    }
}

/// Linear exploration decay, constant after `epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 0.2, end: 0.001, epochs: 200 }
    }
}

impl EpsilonSchedule {
    /// Exploration rate for zero-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 || epoch >= self.epochs {
            return self.end;
        }
        self.start + (self.end - self.start) * epoch as f64 / self.epochs as f64
    }
}

/// Which value the Q-learning loss regresses onto the return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    /// Best neighbor value at the visited state.
    #[default]
    PseudoMax,
    /// Value of the node actually moved to.
    TakenAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    RlEpisodic,
    RlNstep,
    Il,
}

impl std::str::FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rl_episodic" => Ok(TrainMode::RlEpisodic),
            "rl_nstep" => Ok(TrainMode::RlNstep),
            "il" => Ok(TrainMode::Il),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IlVariant {
    /// Softmax over neighbor state values.
    #[default]
    StateValue,
    /// Softmax over the eight compass channels at the current cell.
    ActionValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub gamma: f64,
    pub optimizer: CenteredRmsProp,
    pub epsilon: EpsilonSchedule,
    pub epochs: usize,
    /// Step budget; `None` uses the planner default per instance.
    pub t_max: Option<usize>,
    pub loss_target: LossTarget,
    pub rewards: RewardScheme,
    /// Window length of the n-step baseline.
    pub nstep: usize,
    pub il_variant: IlVariant,
    /// Instances per imitation update.
    pub batch_size: usize,
    /// Cost model of imitation labels and path comparisons.
    pub cost: CostModel,
    pub seed: u64,
    pub execution: Execution,
    /// Return the parameters of the epoch with the best probe success rate
    /// (then expected reward, then earliest) instead of the last epoch.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::RlEpisodic,
            gamma: 0.99,
            optimizer: CenteredRmsProp::default(),
            epsilon: EpsilonSchedule::default(),
            epochs: 400,
            t_max: None,
            loss_target: LossTarget::PseudoMax,
            rewards: RewardScheme::default(),
            nstep: 5,
            il_variant: IlVariant::StateValue,
            batch_size: 32,
            cost: CostModel::Euclidean,
            seed: 0,
            execution: Execution::Parallel,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let e = &self.epsilon;
        let bad = !(self.gamma > 0.0 && self.gamma <= 1.0)
            || !(0.0..=1.0).contains(&e.start)
            || !(0.0..=1.0).contains(&e.end)
            || self.nstep == 0
            || self.batch_size == 0
            || self.t_max == Some(0);
        if bad {
            return Err(TrainError::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// One trajectory with its rewards and discounted returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// `s_0 ..= s_T`.
    pub states: Vec<NodeId>,
    /// Next node for the neighbor readout, compass direction for the compass
    /// readout.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub outcome: Outcome,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn reached(&self) -> bool {
        self.outcome == Outcome::Reached
    }
}

/// `R_t = r_t + gamma R_{t+1}` backwards from `bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Epsilon-greedy choice among `k` options with greedy index `greedy`.
fn epsilon_greedy(rng: &mut Rng, epsilon: f64, k: usize, greedy: usize) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..k)
    } else {
        greedy
    }
}

/// Result of one environment transition.
struct Transition {
    action: usize,
    next: NodeId,
    reward: f64,
    outcome: Option<Outcome>,
}

fn act(
    instance: &PlanningInstance,
    values: &ValueMap,
    readout: Readout,
    s: NodeId,
    epsilon: f64,
    rewards: &RewardScheme,
    rng: &mut Rng,
) -> Result<Transition, PlanError> {
    let (action, next) = match readout {
        Readout::NeighborValue => {
            let ids = instance.graph.neighbor_ids(s);
            let (best, _) = planner::best_neighbor(&values.v, &instance.graph, s)?;
            let greedy = ids.iter().position(|&j| j == best).expect("best is a neighbor");
            let j = ids[epsilon_greedy(rng, epsilon, ids.len(), greedy)];
            (j, Some(j))
        }
        Readout::Compass => {
            let maze = instance.maze.as_ref().ok_or_else(|| PlanError::Mode("compass readout requires a maze".into()))?;
            let mut greedy = 0;
            for a in 1..values.q_channels.len() {
                if values.q_channels[a][s] > values.q_channels[greedy][s] {
                    greedy = a;
                }
            }
            let a = epsilon_greedy(rng, epsilon, 8, greedy);
            (a, maze.step(s, a))
        }
    };
    Ok(match next {
        Some(j) if j == instance.goal => Transition {
            action,
            next: j,
            reward: rewards.step + rewards.goal,
            outcome: Some(Outcome::Reached),
        },
        Some(j) => Transition { action, next: j, reward: rewards.step, outcome: None },
        // Blocked move: penalized, agent stays put, episode continues.
        None => Transition { action, next: s, reward: rewards.step + rewards.obstacle, outcome: None },
    })
}

/// Rolls out an epsilon-greedy episode under a fixed value map.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    instance: &PlanningInstance,
    values: &ValueMap,
    readout: Readout,
    epsilon: f64,
    t_max: usize,
    gamma: f64,
    rewards: &RewardScheme,
    rng: &mut Rng,
) -> Result<EpisodeRecord, PlanError> {
    let mut states = vec![instance.start];
    let mut actions = Vec::new();
    let mut rs = Vec::new();
    let mut outcome = Outcome::BudgetExhausted;
    let mut s = instance.start;
    while actions.len() < t_max {
        let tr = act(instance, values, readout, s, epsilon, rewards, rng)?;
        actions.push(tr.action);
        rs.push(tr.reward);
        states.push(tr.next);
        s = tr.next;
        if let Some(o) = tr.outcome {
            outcome = o;
            break;
        }
    }
    let returns = discounted_returns(&rs, gamma, 0.0);
    Ok(EpisodeRecord { states, actions, rewards: rs, returns, outcome })
}

fn value_map_from_tape(tape: &Tape, rec: &Recorded, prepared: &PreparedGraph) -> Result<ValueMap, PlanError> {
    let v = tape.value(rec.v).to_vec();
    let q_pseudo = planner::pseudo_action_values_lenient(&v, &prepared.graph);
    Ok(ValueMap { v, q_channels: rec.q.iter().map(|&q| tape.value(q).to_vec()).collect(), q_pseudo })
}

/// Records the predictions `q_hat_t` for steps `range` of an episode.
fn record_predictions(
    tape: &mut Tape,
    rec: &Recorded,
    prepared: &PreparedGraph,
    readout: Readout,
    target: LossTarget,
    states: &[NodeId],
    actions: &[usize],
) -> Result<Var, ModelError> {
    let n = prepared.graph.node_count();
    let pred = match (readout, target) {
        (Readout::NeighborValue, LossTarget::PseudoMax) => {
            let sets = IndexSets::from_sets(states.iter().map(|&s| prepared.neighbors.get(s).to_vec()));
            tape.set_max(rec.v, &sets)?
        }
        (Readout::NeighborValue, LossTarget::TakenAction) => {
            let idx: Arc<[usize]> = actions.into();
            tape.gather(rec.v, &idx)?
        }
        (Readout::Compass, LossTarget::PseudoMax) => {
            let best = tape.channel_max(&rec.q)?;
            let idx: Arc<[usize]> = states.into();
            tape.gather(best, &idx)?
        }
        (Readout::Compass, LossTarget::TakenAction) => {
            let all = tape.concat(&rec.q)?;
            let idx: Arc<[usize]> = states.iter().zip(actions).map(|(&s, &a)| a * n + s).collect();
            tape.gather(all, &idx)?
        }
    };
    Ok(pred)
}

/// `sum_t (R_t - q_hat_t)^2` for a stored episode under the current
/// parameters, with its gradient. The episode itself is held fixed.
pub fn episode_loss(
    model: &Gvin,
    prepared: &PreparedGraph,
    goal: NodeId,
    episode: &EpisodeRecord,
    target: LossTarget,
) -> Result<(f64, Gradients), ModelError> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, prepared, goal)?;
    let t = episode.len();
    let pred = record_predictions(
        &mut tape,
        &rec,
        prepared,
        model.spec.readout,
        target,
        &episode.states[..t],
        &episode.actions,
    )?;
    let returns: Arc<[f64]> = episode.returns.clone().into();
    let loss = tape.squared_error(pred, &returns)?;
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)?))
}

/// Runs one episode, accumulates the whole-episode gradient and applies a
/// single optimizer step. Returns the episode and its loss.
#[allow(clippy::too_many_arguments)]
pub fn episodic_q_update(
    model: &mut Gvin,
    prepared: &PreparedGraph,
    instance: &PlanningInstance,
    epsilon: f64,
    t_max: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(EpisodeRecord, f64), TrainError> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, prepared, instance.goal)?;
    let values = value_map_from_tape(&tape, &rec, prepared)?;
    let episode = run_episode(instance, &values, model.spec.readout, epsilon, t_max, cfg.gamma, &cfg.rewards, rng)?;
    if episode.is_empty() {
        log::warn!("empty episode; no update");
        return Ok((episode, 0.0));
    }
    let t = episode.len();
    let pred = record_predictions(
        &mut tape,
        &rec,
        prepared,
        model.spec.readout,
        cfg.loss_target,
        &episode.states[..t],
        &episode.actions,
    )?;
    let returns: Arc<[f64]> = episode.returns.clone().into();
    let loss = tape.squared_error(pred, &returns)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    model.params.accumulate(&grads);
    cfg.optimizer.step(&mut model.params)?;
    Ok((episode, value))
}

/// Statistics of one n-step stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NstepStream {
    pub episode: EpisodeRecord,
    pub losses: Vec<f64>,
}

impl NstepStream {
    pub fn updates(&self) -> usize {
        self.losses.len()
    }
}

/// n-step Q-learning: the policy acts for at most `n` steps, targets are
/// bootstrapped from the best neighbor value at the window end unless the
/// goal was reached, and one optimizer step follows every window.
#[allow(clippy::too_many_arguments)]
pub fn nstep_q_update(
    model: &mut Gvin,
    prepared: &PreparedGraph,
    instance: &PlanningInstance,
    n: usize,
    epsilon: f64,
    t_max: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<NstepStream, TrainError> {
    if n == 0 {
        return Err(TrainError::Config("n must be at least 1".into()));
    }
    let mut states = vec![instance.start];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut losses = Vec::new();
    let mut outcome = Outcome::BudgetExhausted;
    let mut s = instance.start;
    while actions.len() < t_max {
        let mut tape = Tape::new();
        let rec = model.record(&mut tape, prepared, instance.goal)?;
        let values = value_map_from_tape(&tape, &rec, prepared)?;
        let begin = actions.len();
        let mut terminal = false;
        while actions.len() < t_max && actions.len() - begin < n {
            let tr = act(instance, &values, model.spec.readout, s, epsilon, &cfg.rewards, rng)?;
            actions.push(tr.action);
            rewards.push(tr.reward);
            states.push(tr.next);
            s = tr.next;
            if let Some(o) = tr.outcome {
                outcome = o;
                terminal = true;
                break;
            }
        }
        let bootstrap = if terminal { 0.0 } else { values.q_pseudo[s] };
        let returns: Arc<[f64]> = discounted_returns(&rewards[begin..], cfg.gamma, bootstrap).into();
        let pred = record_predictions(
            &mut tape,
            &rec,
            prepared,
            model.spec.readout,
            cfg.loss_target,
            &states[begin..actions.len()],
            &actions[begin..],
        )?;
        let loss = tape.squared_error(pred, &returns)?;
        losses.push(tape.scalar(loss));
        let grads = tape.backward(loss)?;
        model.params.zero_grad();
        model.params.accumulate(&grads);
        cfg.optimizer.step(&mut model.params)?;
        if terminal {
            break;
        }
    }
    let returns = discounted_returns(&rewards, cfg.gamma, 0.0);
    Ok(NstepStream { episode: EpisodeRecord { states, actions, rewards, returns, outcome }, losses })
}

/// Oracle supervision for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct IlExample {
    /// Index into the prepared graphs.
    pub graph: usize,
    pub goal: NodeId,
    /// Non-goal states on the oracle path and their optimal successors.
    pub states: Vec<NodeId>,
    pub next: Vec<NodeId>,
}

impl IlExample {
    pub fn from_label(graph: usize, label: &OracleLabel) -> Self {
        let (states, next) = label.transitions().unzip();
        Self { graph, goal: *label.path.last().expect("non-empty path"), states, next }
    }
}

/// Summed cross-entropy of the model's move distribution against the oracle
/// moves of one example, with its gradient.
pub fn imitation_loss(
    model: &Gvin,
    prepared: &PreparedGraph,
    example: &IlExample,
    variant: IlVariant,
) -> Result<(f64, Gradients), ModelError> {
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, prepared, example.goal)?;
    let n = prepared.graph.node_count();
    let (logits, sets, labels) = match variant {
        IlVariant::StateValue => {
            let sets = IndexSets::from_sets(example.states.iter().map(|&s| prepared.neighbors.get(s).to_vec()));
            let labels = example
                .states
                .iter()
                .zip(&example.next)
                .map(|(&s, next)| {
                    prepared
                        .neighbors
                        .get(s)
                        .iter()
                        .position(|j| j == next)
                        .ok_or_else(|| PlanError::Mode(format!("oracle move {s}->{next} is not an edge")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (rec.v, sets, labels)
        }
        IlVariant::ActionValue => {
            let maze = prepared
                .maze
                .as_ref()
                .ok_or_else(|| PlanError::Mode("action-value imitation requires a lattice".into()))?;
            if rec.q.len() != 8 {
                return Err(PlanError::Mode(format!("action-value imitation needs 8 channels, got {}", rec.q.len())).into());
            }
            let all = tape.concat(&rec.q)?;
            let sets = IndexSets::from_sets(example.states.iter().map(|&s| (0..8).map(move |a| a * n + s)));
            let labels = example
                .states
                .iter()
                .zip(&example.next)
                .map(|(&s, &next)| {
                    maze.direction_between(s, next)
                        .ok_or_else(|| PlanError::Mode(format!("oracle move {s}->{next} is not a compass step")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (all, sets, labels)
        }
    };
    let loss = tape.softmax_cross_entropy(logits, &Arc::new(sets), &labels.into())?;
    let value = tape.scalar(loss);
    Ok((value, tape.backward(loss)?))
}

/// One optimizer step on the summed loss of a batch. Per-example gradients
/// are computed concurrently and summed in batch order.
pub fn imitation_update(
    model: &mut Gvin,
    prepared: &[PreparedGraph],
    batch: &[IlExample],
    variant: IlVariant,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let snapshot: &Gvin = model;
    let parts = par::map(cfg.execution, batch, |_, ex| imitation_loss(snapshot, &prepared[ex.graph], ex, variant))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let loss: f64 = parts.iter().map(|(l, _)| l).sum();
    let grads = Gradients::sum(parts.iter().map(|(_, g)| g));
    model.params.zero_grad();
    model.params.accumulate(&grads);
    cfg.optimizer.step(&mut model.params)?;
    Ok(loss)
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub success_rate: f64,
    pub expected_reward: f64,
    pub mean_loss: f64,
    pub epsilon: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,success_rate,expected_reward,mean_loss,epsilon";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.success_rate, self.expected_reward, self.mean_loss, self.epsilon)
    }
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from(EpochMetrics::CSV_HEADER);
    out.push('\n');
    for m in log {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Gvin,
    pub log: Vec<EpochMetrics>,
    /// Epoch whose parameters were returned; 0 is the initialization.
    pub selected_epoch: usize,
}

fn random_start(instance: &PlanningInstance, rng: &mut Rng) -> NodeId {
    let n = instance.graph.node_count();
    let s = rng.gen_range(0..n - 1);
    if s >= instance.goal {
        s + 1
    } else {
        s
    }
}

/// Trains `model` on `dataset` and logs probe-set metrics after each epoch.
///
/// Reinforcement modes run one episode per training graph per epoch, in a
/// seeded shuffled order, from a random start node toward the instance goal.
/// Imitation mode supervises the oracle path from each instance start.
pub fn train(
    mut model: Gvin,
    dataset: &[PlanningInstance],
    probe: &[PlanningInstance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let prepared = par::map(cfg.execution, dataset, |_, inst| model.prepare_instance(inst))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let examples = if cfg.mode == TrainMode::Il {
        let labels = eval::label_all(dataset, cfg.cost, cfg.execution)?;
        labels.iter().enumerate().map(|(i, l)| IlExample::from_label(i, l)).collect()
    } else {
        Vec::new()
    };
    let eval_opts = EvalOptions { t_max: cfg.t_max, cost: cfg.cost, rewards: cfg.rewards, execution: cfg.execution };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(EpochMetrics, Gvin)> = None;
    for epoch in 0..cfg.epochs {
        let last_good = model.clone();
        let epsilon = cfg.epsilon.at(epoch);
        let result = run_epoch(&mut model, dataset, &prepared, &examples, epoch, epsilon, cfg);
        let mean_loss = match result {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err(diverged(epoch, format!("loss {l}"), last_good)),
            Err(e) if e.is_divergence() => return Err(diverged(epoch, e.to_string(), last_good)),
            Err(e) => return Err(e),
        };
        let (success_rate, expected_reward) = if probe.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            match eval::compute_metrics(&model, probe, None, &eval_opts) {
                Ok(m) => (m.success_rate, m.expected_reward),
                Err(EvalError::Model(e)) => {
                    let e = TrainError::Model(e);
                    if e.is_divergence() {
                        return Err(diverged(epoch, e.to_string(), last_good));
                    }
                    return Err(e);
                }
                Err(e) => return Err(e.into()),
            }
        };
        let row = EpochMetrics { epoch: epoch + 1, success_rate, expected_reward, mean_loss, epsilon };
        log::info!("{}", row.csv_row());
        log.push(row);
        if cfg.keep_best && !probe.is_empty() {
            let better = best.as_ref().is_none_or(|(b, _)| {
                (row.success_rate, row.expected_reward) > (b.success_rate, b.expected_reward)
            });
            if better {
                best = Some((row, model.clone()));
            }
        }
    }
    Ok(match best {
        Some((row, m)) => TrainOutcome { model: m, log, selected_epoch: row.epoch },
        None => TrainOutcome { model, selected_epoch: cfg.epochs, log },
    })
}

fn diverged(epoch: usize, reason: String, last_good: Gvin) -> TrainError {
    TrainError::Diverged { epoch: epoch + 1, reason, last_good: Box::new(last_good) }
}

fn run_epoch(
    model: &mut Gvin,
    dataset: &[PlanningInstance],
    prepared: &[PreparedGraph],
    examples: &[IlExample],
    epoch: usize,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut order_rng = rng::stream(rng::derive(cfg.seed, SHUFFLE_TAG), epoch as u64);
    let mut total = 0.0;
    let mut count = 0usize;
    match cfg.mode {
        TrainMode::Il => {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<IlExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
                total += imitation_update(model, prepared, &batch, cfg.il_variant, cfg)?;
                count += batch.len();
            }
        }
        TrainMode::RlEpisodic | TrainMode::RlNstep => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut order_rng);
            let episode_seed = rng::derive(cfg.seed, EPISODE_TAG);
            for &i in &order {
                let mut rng = rng::stream(episode_seed, (epoch * dataset.len() + i) as u64);
                let start = random_start(&dataset[i], &mut rng);
                let inst = dataset[i].with_endpoints(start, dataset[i].goal).map_err(ModelError::from)?;
                let t_max = cfg.t_max.unwrap_or_else(|| planner::default_t_max(&inst));
                let loss = if cfg.mode == TrainMode::RlEpisodic {
                    episodic_q_update(model, &prepared[i], &inst, epsilon, t_max, cfg, &mut rng)?.1
                } else {
                    nstep_q_update(model, &prepared[i], &inst, cfg.nstep, epsilon, t_max, cfg, &mut rng)?
                        .losses
                        .iter()
                        .sum()
                };
                total += loss;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}
