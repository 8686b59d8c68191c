#![allow(dead_code)]

use std::sync::Arc;

use gvin::autodiff::{Gradients, ParamId};
use gvin::eval::{shortest_path_oracle, CostModel};
use gvin::graph::{generate_geometric_indexed, MazeWorld, PlanningInstance};
use gvin::kernels::{DirectionalSpec, EmbeddingSpec, KernelSpec, SpatialSpec};
use gvin::model::{Gvin, ModelSpec};
use gvin::planner::{Readout, RewardMode, VIConfig};
use gvin::rng;
use gvin::training::{episode_loss, imitation_loss, run_episode, IlExample, IlVariant, LossTarget, RewardScheme};
use rand::Rng;

/// `count` connected geometric instances with a uniformly drawn goal and a
/// distinct start.
pub fn geometric_instances(n: usize, count: usize, radius: f64, seed: u64) -> Vec<PlanningInstance> {
    (0..count)
        .map(|i| {
            let g = Arc::new(generate_geometric_indexed(n, radius, seed, i as u64).unwrap());
            let mut rng = rng::stream(rng::derive(seed, 0x90a1), i as u64);
            let goal = rng.gen_range(0..n);
            let mut start = rng.gen_range(0..n - 1);
            if start >= goal {
                start += 1;
            }
            PlanningInstance::new(g, start, goal).unwrap()
        })
        .collect()
}

/// Small kernels for gradient checks: every family, every trainable piece.
pub fn small_kernels() -> Vec<KernelSpec> {
    let dir = DirectionalSpec { directions: 4, order: 2.0, direction_aware: false };
    vec![
        KernelSpec::Directional(dir.clone()),
        KernelSpec::Spatial(SpatialSpec { directional: dir, bins: 3, d_max: 1.5 }),
        KernelSpec::Embedding(EmbeddingSpec { hidden: [8, 8], include_edge_weight: true, eq7_literal: false }),
    ]
}

/// A 3x3 maze with one obstacle: always 8 connected free cells.
pub fn eight_cell_maze(seed: u64) -> Arc<MazeWorld> {
    let mut rng = rng::stream(seed, 0x33);
    let blocked = rng.gen_range(0..9);
    let free: Vec<usize> = (0..9).filter(|&c| c != blocked).collect();
    let start = free[rng.gen_range(0..8)];
    let goal = loop {
        let g = free[rng.gen_range(0..8)];
        if g != start {
            break g;
        }
    };
    let mask = (0..9).map(|c| c == blocked).collect();
    Arc::new(MazeWorld::from_mask(3, 3, mask, start, goal).unwrap())
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Moves every parameter off the initialization, where zero biases put
/// self-loop activations exactly on a ReLU kink. Biases are pushed positive
/// so hidden units stay active.
pub fn jitter(mut model: Gvin, seed: u64) -> Gvin {
    let mut rng = rng::stream(seed, 0x717);
    for p in model.params.iter_mut() {
        let bias = p.name.ends_with(".b");
        for x in p.values.iter_mut() {
            *x += if bias { rng.gen_range(0.1..0.3) } else { rng.gen_range(-0.2..0.2) };
        }
    }
    model
}

/// One gradient-check outcome.
#[derive(Debug)]
pub struct FdCase {
    pub label: String,
    /// Worst relative error over elements whose finite difference is
    /// resolvable at step `FD_STEP`.
    pub max_rel_error: f64,
    /// Parameter holding that element.
    pub worst: String,
    pub elements: usize,
    /// Elements where the forward and backward one-sided slopes disagree,
    /// i.e. a ReLU or max boundary lies within the step, or the slope is
    /// below the roundoff floor of the loss.
    pub unresolved: usize,
}

/// Relative disagreement between one-sided slopes above which an element's
/// central difference is not a trustworthy derivative estimate.
pub const ONE_SIDED_AGREEMENT: f64 = 1e-3;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn fd(label: String, model: &Gvin, loss: impl Fn(&Gvin) -> (f64, Gradients)) -> FdCase {
    let h = FD_STEP;
    let (f0, analytic) = loss(model);
    let mut work = model.clone();
    let mut case = FdCase { label, max_rel_error: 0.0, worst: String::new(), elements: 0, unresolved: 0 };
    for pi in 0..model.params.len() {
        let id = ParamId(pi);
        for i in 0..model.params.get(id).len() {
            let orig = model.params.get(id).values[i];
            work.params.get_mut(id).values[i] = orig + h;
            let up = loss(&work).0;
            work.params.get_mut(id).values[i] = orig - h;
            let down = loss(&work).0;
            work.params.get_mut(id).values[i] = orig;
            case.elements += 1;
            let (fwd, bwd) = ((up - f0) / h, (f0 - down) / h);
            if rel(fwd, bwd) > ONE_SIDED_AGREEMENT {
                case.unresolved += 1;
                continue;
            }
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let e = rel(a, (up - down) / (2.0 * h));
            if e > case.max_rel_error {
                case.max_rel_error = e;
                case.worst = model.params.get(id).name.clone();
            }
        }
    }
    case
}

/// Analytic vs central-difference gradients for every kernel family on the
/// episodic loss and the state-value imitation loss over `graphs` random
/// 8-node graphs, and the action-value imitation loss over as many 8-cell
/// lattices.
pub fn gradient_suite(graphs: usize) -> Vec<FdCase> {
    let mut cases = Vec::new();
    let vi = VIConfig { k: 3, channels: 2, gamma: 0.9 };
    for (ki, kernel) in small_kernels().into_iter().enumerate() {
        let family = kernel.family();
        let mut spec = ModelSpec::new(kernel.clone(), vi);
        spec.init_std = 0.3;
        for (gi, inst) in geometric_instances(8, graphs, 0.6, 40 + ki as u64).into_iter().enumerate() {
            let model = jitter(Gvin::new(spec.clone(), gi as u64).unwrap(), gi as u64);
            let prep = model.prepare_instance(&inst).unwrap();
            let values = model.plan(&prep, inst.goal).unwrap();
            let mut rng = rng::stream(7, gi as u64);
            let episode = run_episode(&inst, &values, Readout::NeighborValue, 0.5, 6, 0.9, &RewardScheme::default(), &mut rng)
                .unwrap();
            cases.push(fd(format!("{family}/episodic/{gi}"), &model, |m| {
                episode_loss(m, &prep, inst.goal, &episode, LossTarget::PseudoMax).unwrap()
            }));
            let label = shortest_path_oracle(&inst, CostModel::Euclidean).unwrap();
            let example = IlExample::from_label(0, &label);
            cases.push(fd(format!("{family}/il_state/{gi}"), &model, |m| {
                imitation_loss(m, &prep, &example, IlVariant::StateValue).unwrap()
            }));
        }
        let mut spec = ModelSpec::new(kernel, VIConfig { k: 3, channels: 8, gamma: 0.9 });
        spec.reward = RewardMode::ConvNet { hidden_channels: 2 };
        spec.readout = Readout::Compass;
        // Larger weights saturate the eight-way softmax, leaving slopes
        // below what a 1e-5 step can resolve.
        spec.init_std = 0.1;
        for gi in 0..graphs {
            let maze = eight_cell_maze(100 * ki as u64 + gi as u64);
            let inst = PlanningInstance::from_maze(maze);
            let model = jitter(Gvin::new(spec.clone(), gi as u64).unwrap(), gi as u64);
            let prep = model.prepare_instance(&inst).unwrap();
            let label = shortest_path_oracle(&inst, CostModel::Hops).unwrap();
            let example = IlExample::from_label(0, &label);
            cases.push(fd(format!("{family}/il_action/{gi}"), &model, |m| {
                imitation_loss(m, &prep, &example, IlVariant::ActionValue).unwrap()
            }));
        }
    }
    cases
}
