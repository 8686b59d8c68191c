//! The trainable planner: a kernel, a reward extractor and a value-iteration
//! configuration sharing one parameter store, plus JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, IndexSets, ParamStore, Tape, Var};
use crate::graph::{GraphError, MazeWorld, NodeId, PlanningInstance, SpatialGraph};
use crate::kernels::{KernelError, KernelSpec, PreparedKernel, TransitionOperator};
use crate::planner::{self, PlanError, Readout, RewardMode, VIConfig, ValueMap};
use crate::rng;

const INIT_TAG: u64 = 0x1417;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kernel: KernelSpec,
    pub vi: VIConfig,
    pub reward: RewardMode,
    #[serde(default)]
    pub readout: Readout,
    pub init_std: f64,
}

impl ModelSpec {
    pub fn new(kernel: KernelSpec, vi: VIConfig) -> Self {
        Self { kernel, vi, reward: RewardMode::Identity, readout: Readout::NeighborValue, init_std: 0.01 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.kernel.validate()?;
        self.vi.validate()?;
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(ModelError::Checkpoint(format!("init_std {}", self.init_std)));
        }
        if self.readout == Readout::Compass && self.vi.channels != 8 {
            return Err(PlanError::Mode("compass readout needs 8 channels".into()).into());
        }
        Ok(())
    }
}

/// Per-graph data that does not depend on parameters or on the goal.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Arc<SpatialGraph>,
    pub maze: Option<Arc<MazeWorld>>,
    pub kernel: PreparedKernel,
    /// Out-neighbors of every node, in canonical order.
    pub neighbors: Arc<IndexSets>,
}

impl PreparedGraph {
    pub fn instance(&self, start: NodeId, goal: NodeId) -> Result<PlanningInstance, GraphError> {
        let mut inst = PlanningInstance::new(self.graph.clone(), start, goal)?;
        inst.maze = self.maze.clone();
        Ok(inst)
    }
}

/// Tape handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub v: Var,
    /// Final per-channel action values.
    pub q: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Gvin {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Gvin {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = rng::stream(rng::derive(seed, INIT_TAG), 0);
        let mut params = ParamStore::new();
        spec.reward.register(&mut params, spec.init_std, &mut rng);
        spec.kernel.register(&mut params, spec.vi.channels, spec.init_std, &mut rng);
        Ok(Self { spec, params })
    }

    /// Same parameters, different recurrence depth.
    pub fn with_k(&self, k: usize) -> Self {
        let mut m = self.clone();
        m.spec.vi.k = k;
        m
    }

    pub fn prepare(&self, graph: Arc<SpatialGraph>, maze: Option<Arc<MazeWorld>>) -> Result<PreparedGraph, ModelError> {
        let kernel = self.spec.kernel.prepare(&graph)?;
        let neighbors = IndexSets::from_sets((0..graph.node_count()).map(|i| graph.neighbor_ids(i).to_vec()));
        Ok(PreparedGraph { graph, maze, kernel, neighbors: Arc::new(neighbors) })
    }

    pub fn prepare_instance(&self, instance: &PlanningInstance) -> Result<PreparedGraph, ModelError> {
        self.prepare(instance.graph.clone(), instance.maze.clone())
    }

    /// Records reward extraction, operator construction and the recurrence.
    pub fn record(&self, tape: &mut Tape, prepared: &PreparedGraph, goal: NodeId) -> Result<Recorded, ModelError> {
        prepared.graph.check_node(goal)?;
        let r = self
            .spec
            .reward
            .record(tape, &self.params, &prepared.graph, prepared.maze.as_deref(), goal)?;
        let ops = self.spec.kernel.record(tape, &self.params, &prepared.kernel, self.spec.vi.channels)?;
        let (v, q) = planner::record_value_iteration(tape, r, prepared.kernel.pattern(), &ops, &self.spec.vi)?;
        Ok(Recorded { v, q })
    }

    pub fn operators(&self, prepared: &PreparedGraph) -> Result<TransitionOperator, ModelError> {
        Ok(self.spec.kernel.build(&self.params, &prepared.kernel, self.spec.vi.channels)?)
    }

    /// Forward pass without gradients.
    pub fn plan(&self, prepared: &PreparedGraph, goal: NodeId) -> Result<ValueMap, ModelError> {
        let inst = PlanningInstance {
            graph: prepared.graph.clone(),
            maze: prepared.maze.clone(),
            start: goal,
            goal,
        };
        prepared.graph.check_node(goal)?;
        let r = self.spec.reward.extract(&self.params, &inst)?;
        let ops = self.operators(prepared)?;
        Ok(planner::value_iterate(&r, &ops, &prepared.graph, &self.spec.vi)?)
    }

    pub fn plan_instance(&self, instance: &PlanningInstance) -> Result<ValueMap, ModelError> {
        self.plan(&self.prepare_instance(instance)?, instance.goal)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kernel: self.spec.kernel.family().to_string(),
            hyper: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| (p.name.clone(), ParamRecord { shape: p.shape.clone(), data: p.values.clone() }))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, ModelError> {
        if ck.kernel != ck.hyper.kernel.family() {
            return Err(ModelError::Checkpoint(format!(
                "kernel tag {} disagrees with hyperparameters ({})",
                ck.kernel,
                ck.hyper.kernel.family()
            )));
        }
        let mut model = Gvin::new(ck.hyper, 0)?;
        if model.params.len() != ck.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                ck.params.len()
            )));
        }
        for (name, rec) in ck.params {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unexpected parameter {name}")))?;
            if model.params.get(id).shape != rec.shape {
                return Err(ModelError::Checkpoint(format!("shape mismatch for {name}")));
            }
            model.params.set_values(&name, rec.data)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// On-disk checkpoint layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kernel: String,
    pub hyper: ModelSpec,
    pub params: BTreeMap<String, ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}
