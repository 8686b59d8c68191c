//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdicts always reach stdout.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 5`.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gvin::autodiff::CsrPattern;
use gvin::eval::{
    compute_metrics, cost_to_goal, label_all, path_cost, shortest_path_oracle, CostModel, EvalOptions, MetricsReport,
};
use gvin::graph::{generate_geometric_indexed, generate_geometric_weighted, generate_maze_indexed, MazeWorld};
use gvin::graph::{PlanningInstance, SpatialGraph};
use gvin::kernels::{DirectionalSpec, EmbeddingSpec, KernelSpec, SpatialSpec, TransitionOperator};
use gvin::model::{Gvin, ModelSpec};
use gvin::planner::{value_iterate, Readout, RewardMode, VIConfig};
use gvin::training::{metrics_csv, train, IlVariant, TrainConfig, TrainMode, TrainOutcome};
use gvin::{rng, Execution};
use rand::Rng;

// Pinned tolerances and targets.
const FD_BUDGET: Duration = Duration::from_secs(120);
const MAX_UNRESOLVED_FRACTION: f64 = 0.01;
const SHIFT_TOL: f64 = 1e-12;
const STENCIL_TOL: f64 = 1e-12;
const VI_TOL: f64 = 1e-12;
const RL_SUCCESS: f64 = 0.95;
const RL_REWARD: f64 = 0.90;
const RL_BUDGET: Duration = Duration::from_secs(30 * 60);
const GEN_100_SUCCESS: f64 = 0.90;
const GEN_500_SUCCESS: f64 = 0.80;
const EPISODIC_MARGIN: f64 = 0.20;
const IL_ACCURACY: f64 = 0.85;
const IL_SUCCESS: f64 = 0.90;
const OVERFIT_PATH_DIFF: f64 = 0.005;
const LINEARITY_FACTOR: f64 = 1.5;

const RL_SEED: u64 = 8;
const IL_SEED: u64 = 7;

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} [{id:>2}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

/// Trained artifacts shared between criteria.
#[derive(Default)]
struct Runs {
    rl: Option<(TrainOutcome, MetricsReport, Duration)>,
    il: Option<(TrainOutcome, MetricsReport, Duration)>,
}

fn geometric_split(n: usize, count: usize, radius: f64, seed: u64) -> Vec<PlanningInstance> {
    common::geometric_instances(n, count, radius, seed)
}

fn maze_split(count: usize, seed: u64) -> Vec<PlanningInstance> {
    (0..count)
        .map(|i| PlanningInstance::from_maze(Arc::new(generate_maze_indexed(8, 8, 0.2, seed, i as u64).unwrap())))
        .collect()
}

fn rl_model() -> Gvin {
    let vi = VIConfig { k: 40, channels: 10, gamma: 0.99 };
    let mut spec = ModelSpec::new(KernelSpec::Embedding(EmbeddingSpec::default()), vi);
    spec.init_std = 0.1;
    Gvin::new(spec, RL_SEED).unwrap()
}

fn rl_config(mode: TrainMode) -> TrainConfig {
    TrainConfig { mode, epochs: 400, seed: RL_SEED, keep_best: true, execution: Execution::Sequential, ..Default::default() }
}

/// Trains on 200 ten-node graphs, selects on 50 validation graphs and
/// reports on 100 held-out graphs.
fn run_rl(mode: TrainMode) -> (TrainOutcome, MetricsReport, Duration) {
    let train_set = geometric_split(10, 200, 0.5, 1);
    let validation = geometric_split(10, 50, 0.5, 4);
    let test = geometric_split(10, 100, 0.5, 2);
    let t = Instant::now();
    let out = train(rl_model(), &train_set, &validation, &rl_config(mode)).unwrap();
    let elapsed = t.elapsed();
    let report = compute_metrics(&out.model, &test, None, &EvalOptions::default()).unwrap();
    (out, report, elapsed)
}

fn run_il() -> (TrainOutcome, MetricsReport, Duration) {
    let train_set = maze_split(2000, 1);
    let probe = maze_split(100, 3);
    let test = maze_split(200, 2);
    let mut spec = ModelSpec::new(
        KernelSpec::Directional(DirectionalSpec { directions: 8, order: 20.0, direction_aware: true }),
        VIConfig { k: 20, channels: 8, gamma: 0.99 },
    );
    spec.reward = RewardMode::ConvNet { hidden_channels: 20 };
    spec.readout = Readout::Compass;
    let model = Gvin::new(spec, IL_SEED).unwrap();
    let cfg = TrainConfig {
        mode: TrainMode::Il,
        il_variant: IlVariant::ActionValue,
        cost: CostModel::Hops,
        epochs: 20,
        seed: IL_SEED,
        keep_best: true,
        ..Default::default()
    };
    let t = Instant::now();
    let out = train(model, &train_set, &probe, &cfg).unwrap();
    let elapsed = t.elapsed();
    let labels = label_all(&test, CostModel::Hops, Execution::Parallel).unwrap();
    let opts = EvalOptions { cost: CostModel::Hops, ..Default::default() };
    let report = compute_metrics(&out.model, &test, Some(&labels), &opts).unwrap();
    (out, report, elapsed)
}

fn criterion_1(v: &mut Verdicts) {
    let t = Instant::now();
    let cases = common::gradient_suite(5);
    let elapsed = t.elapsed();
    let worst = cases.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let elements: usize = cases.iter().map(|c| c.elements).sum();
    let unresolved: usize = cases.iter().map(|c| c.unresolved).sum();
    let fraction = unresolved as f64 / elements as f64;
    v.record(
        1,
        "gradient suite",
        worst.max_rel_error <= common::FD_TOL && fraction <= MAX_UNRESOLVED_FRACTION && elapsed < FD_BUDGET,
        format!(
            "{} cases, max rel error {:.2e} ({}, {}) <= {:.0e}; unresolved {unresolved}/{elements} <= {:.0}%; {:.1}s",
            cases.len(),
            worst.max_rel_error,
            worst.label,
            worst.worst,
            common::FD_TOL,
            MAX_UNRESOLVED_FRACTION * 100.0,
            elapsed.as_secs_f64()
        ),
    );
}

fn all_kernels(d_max: f64) -> Vec<KernelSpec> {
    let dir = DirectionalSpec { directions: 8, order: 20.0, direction_aware: false };
    vec![
        KernelSpec::Directional(DirectionalSpec::default()),
        KernelSpec::Spatial(SpatialSpec { directional: dir, bins: 10, d_max }),
        KernelSpec::Embedding(EmbeddingSpec::default()),
    ]
}

fn operators(kernel: &KernelSpec, graph: &Arc<SpatialGraph>, seed: u64) -> TransitionOperator {
    let mut spec = ModelSpec::new(kernel.clone(), VIConfig { k: 1, channels: 3, gamma: 0.99 });
    spec.init_std = 0.5;
    let model = Gvin::new(spec, seed).unwrap();
    model.operators(&model.prepare(graph.clone(), None).unwrap()).unwrap()
}

fn criterion_2(v: &mut Verdicts) {
    let mut worst = 0.0f64;
    for kernel in all_kernels(0.6) {
        for gi in 0..20u64 {
            let g = Arc::new(generate_geometric_indexed(12, 0.45, 20, gi).unwrap());
            let base = operators(&kernel, &g, gi);
            let mut rng = rng::stream(21, gi);
            for _ in 0..100 {
                let shift = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
                let moved = operators(&kernel, &Arc::new(g.translated(shift)), gi);
                assert_eq!(moved.pattern, base.pattern);
                for (a, b) in base.channels.iter().zip(&moved.channels) {
                    for (x, y) in a.iter().zip(b) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
    }
    v.record(
        2,
        "shift invariance",
        worst <= SHIFT_TOL,
        format!("3 kernels x 20 graphs x 100 shifts, max entry change {worst:.2e} <= {SHIFT_TOL:.0e}"),
    );
}

fn adjacency_entries(g: &SpatialGraph, with_diagonal: bool) -> BTreeSet<(usize, usize)> {
    let mut set: BTreeSet<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
    if with_diagonal {
        set.extend((0..g.node_count()).map(|i| (i, i)));
    }
    set
}

fn stencil_deviation() -> f64 {
    let maze = MazeWorld::from_mask(8, 8, vec![false; 64], 0, 63).unwrap();
    let kernel = KernelSpec::Directional(DirectionalSpec { directions: 8, order: 20.0, direction_aware: true });
    let ops = operators(&kernel, &maze.graph_arc(), 3);
    let interior: Vec<usize> =
        (1..7).flat_map(|r| (1..7).map(move |c| r * 8 + c)).map(|cell| maze.node_of_cell(cell).unwrap()).collect();
    let mut worst = 0.0f64;
    for c in 0..ops.channel_count() {
        let stencil = |i: usize| -> Vec<f64> { (0..8).map(|d| ops.entry(c, i, maze.step(i, d).unwrap())).collect() };
        let reference = stencil(interior[0]);
        for &i in &interior {
            let row = stencil(i);
            assert_eq!(ops.pattern.row(i).len(), 8);
            for (a, b) in reference.iter().zip(&row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

fn criterion_3(v: &mut Verdicts) {
    let mut mismatches = 0;
    for gi in 0..50u64 {
        let n = 5 + (gi as usize % 20);
        let g = Arc::new(generate_geometric_weighted(n, 0.5, (0.5, 2.0), 30, gi).unwrap());
        for kernel in all_kernels(0.5) {
            let ops = operators(&kernel, &g, gi);
            let stored: BTreeSet<_> = ops.pattern.entries().collect();
            let expected = adjacency_entries(&g, matches!(kernel, KernelSpec::Embedding(_)));
            if stored != expected || ops.channels.iter().any(|c| c.len() != ops.pattern.nnz()) {
                mismatches += 1;
            }
        }
    }
    let deviation = stencil_deviation();
    v.record(
        3,
        "sparsity and lattice degeneracy",
        mismatches == 0 && deviation < STENCIL_TOL,
        format!(
            "{mismatches} pattern mismatches over 50 graphs x 3 kernels; interior stencil deviation {deviation:.2e} < {STENCIL_TOL:.0e}"
        ),
    );
}

/// Cheapest simple path cost from every node to `goal` by enumeration.
fn exhaustive_costs(g: &SpatialGraph, goal: usize, cost: CostModel) -> Vec<f64> {
    fn walk(g: &SpatialGraph, path: &mut Vec<usize>, goal: usize, cost: CostModel, best: &mut f64) {
        let u = *path.last().unwrap();
        if u == goal {
            // Accumulate from the goal end, as a backward search does.
            let mut total = 0.0;
            for w in path.windows(2).rev() {
                total += cost.edge_cost(g, w[0], w[1], g.weight(w[0], w[1]).unwrap());
            }
            *best = best.min(total);
            return;
        }
        for &j in g.neighbor_ids(u) {
            if !path.contains(&j) {
                path.push(j);
                walk(g, path, goal, cost, best);
                path.pop();
            }
        }
    }
    (0..g.node_count())
        .map(|s| {
            let mut best = f64::INFINITY;
            walk(g, &mut vec![s], goal, cost, &mut best);
            best
        })
        .collect()
}

fn criterion_4(v: &mut Verdicts) {
    let mut mismatches = 0;
    let mut compared = 0;
    for gi in 0..200u64 {
        let n = 3 + (gi as usize % 8);
        let g = Arc::new(generate_geometric_weighted(n, 0.6, (0.5, 2.0), 40, gi).unwrap());
        let goal = gi as usize % n;
        for cost in [CostModel::Hops, CostModel::Euclidean, CostModel::DistOverWeight] {
            let dijkstra = cost_to_goal(&g, goal, cost);
            let brute = exhaustive_costs(&g, goal, cost);
            for s in 0..n {
                compared += 1;
                let mut ok = dijkstra[s] == brute[s];
                if s != goal {
                    let label = shortest_path_oracle(&PlanningInstance::new(g.clone(), s, goal).unwrap(), cost).unwrap();
                    ok &= label.cost == brute[s] && path_cost(&g, &label.path, cost) == brute[s];
                }
                mismatches += usize::from(!ok);
            }
        }
    }
    v.record(
        4,
        "oracle equivalence",
        mismatches == 0,
        format!("{mismatches} inexact of {compared} (graph, cost model, start) triples on 200 graphs"),
    );
}

fn criterion_5(v: &mut Verdicts) {
    let pattern = Arc::new(CsrPattern::new(3, vec![0, 1, 3, 4], vec![1, 0, 2, 1]));
    let ops = TransitionOperator { pattern, channels: vec![vec![1.0, 0.5, 0.5, 1.0]] };
    let g = SpatialGraph::new(vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[(0, 1, 1.0), (1, 2, 1.0)], false).unwrap();
    let r = [0.0, 0.0, 1.0];
    let mut worst = 0.0f64;
    for (k, expected) in [(1, [0.0, 0.5, 0.0]), (2, [0.45, 0.5, 0.45])] {
        let vm = value_iterate(&r, &ops, &g, &VIConfig { k, channels: 1, gamma: 0.9 }).unwrap();
        for (a, b) in vm.v.iter().zip(expected) {
            worst = worst.max((a - b).abs());
        }
    }
    v.record(5, "value iteration hand-check", worst <= VI_TOL, format!("max deviation {worst:.2e} <= {VI_TOL:.0e}"));
}

fn rl(runs: &mut Runs) -> &(TrainOutcome, MetricsReport, Duration) {
    runs.rl.get_or_insert_with(|| run_rl(TrainMode::RlEpisodic))
}

fn il(runs: &mut Runs) -> &(TrainOutcome, MetricsReport, Duration) {
    runs.il.get_or_insert_with(run_il)
}

fn criterion_6(v: &mut Verdicts, runs: &mut Runs) {
    let (out, report, elapsed) = rl(runs);
    v.record(
        6,
        "episodic RL on 10-node graphs",
        report.success_rate >= RL_SUCCESS && report.expected_reward >= RL_REWARD && *elapsed < RL_BUDGET,
        format!(
            "held-out success {:.3} >= {RL_SUCCESS}, expected reward {:.4} >= {RL_REWARD}; epoch {} of {}; {:.0}s",
            report.success_rate,
            report.expected_reward,
            out.selected_epoch,
            out.log.len(),
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_7(v: &mut Verdicts, runs: &mut Runs) {
    let model = rl(runs).0.model.clone();
    let mid = geometric_split(100, 50, 0.18, 3);
    let large = geometric_split(500, 5, 0.085, 5);
    let mid_report = compute_metrics(&model.with_k(40), &mid, None, &EvalOptions::default()).unwrap();
    let large_report = compute_metrics(&model.with_k(200), &large, None, &EvalOptions::default()).unwrap();
    v.record(
        7,
        "scale generalization",
        mid_report.success_rate >= GEN_100_SUCCESS && large_report.success_rate >= GEN_500_SUCCESS,
        format!(
            "100-node K=40 success {:.3} >= {GEN_100_SUCCESS}; 500-node K=200 success {:.3} >= {GEN_500_SUCCESS}",
            mid_report.success_rate, large_report.success_rate
        ),
    );
}

fn criterion_8(v: &mut Verdicts, runs: &mut Runs) {
    let episodic = rl(runs).1.success_rate;
    let (out, nstep, _) = run_rl(TrainMode::RlNstep);
    let gap = episodic - nstep.success_rate;
    v.record(
        8,
        "episodic vs n-step Q-learning",
        gap >= EPISODIC_MARGIN - 1e-9,
        format!(
            "episodic {episodic:.3} - n-step(5) {:.3} = {gap:.3} >= {EPISODIC_MARGIN}; n-step epoch {}, \
             validation success best {:.2}, last {:.2}",
            nstep.success_rate,
            out.selected_epoch,
            out.log.iter().map(|m| m.success_rate).fold(0.0, f64::max),
            out.log.last().map_or(0.0, |m| m.success_rate)
        ),
    );
}

fn criterion_9(v: &mut Verdicts, runs: &mut Runs) {
    let (_, report, elapsed) = il(runs);
    v.record(
        9,
        "imitation on 8x8 mazes",
        report.prediction_accuracy >= IL_ACCURACY && report.success_rate >= IL_SUCCESS,
        format!(
            "held-out accuracy {:.4} >= {IL_ACCURACY}, success {:.3} >= {IL_SUCCESS}, path difference {:.4}; {:.0}s",
            report.prediction_accuracy,
            report.success_rate,
            report.path_difference,
            elapsed.as_secs_f64()
        ),
    );
}

fn criterion_10(v: &mut Verdicts) {
    let graphs = geometric_split(10, 20, 0.5, 6);
    // A shallow recurrence: with K = 40 the cross-entropy drives the
    // operators expansive and the values blow up before the labels fit.
    let vi = VIConfig { k: 5, channels: 10, gamma: 0.99 };
    let mut spec = ModelSpec::new(KernelSpec::Embedding(EmbeddingSpec::default()), vi);
    spec.init_std = 0.1;
    let model = Gvin::new(spec, 10).unwrap();
    let mut cfg = TrainConfig {
        mode: TrainMode::Il,
        il_variant: IlVariant::StateValue,
        epochs: 300,
        batch_size: 1,
        seed: 10,
        ..Default::default()
    };
    cfg.optimizer.initial_mean_square = 0.0;
    let out = train(model, &graphs, &graphs, &cfg).unwrap();
    let labels = label_all(&graphs, cfg.cost, Execution::Parallel).unwrap();
    let report = compute_metrics(&out.model, &graphs, Some(&labels), &EvalOptions::default()).unwrap();
    v.record(
        10,
        "overfit sanity",
        report.success_rate == 1.0 && report.path_difference < OVERFIT_PATH_DIFF,
        format!(
            "training-set success {:.2} == 1.00, path difference {:.4} < {OVERFIT_PATH_DIFF}, accuracy {:.3}",
            report.success_rate, report.path_difference, report.prediction_accuracy
        ),
    );
}

/// Best-of-five mean wall time of one call.
fn time_call(mut f: impl FnMut()) -> f64 {
    f();
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let mut reps = 0u32;
        let t = Instant::now();
        while t.elapsed() < Duration::from_millis(200) {
            f();
            reps += 1;
        }
        best = best.min(t.elapsed().as_secs_f64() / f64::from(reps));
    }
    best
}

fn criterion_11(v: &mut Verdicts) {
    let cfg = VIConfig { k: 40, channels: 10, gamma: 0.99 };
    let kernel = KernelSpec::Directional(DirectionalSpec::default());
    let mut per_unit = Vec::new();
    let mut detail = Vec::new();
    for (n, radius) in [(12, 0.6), (100, 0.19), (1000, 0.058)] {
        let g = Arc::new(generate_geometric_indexed(n, radius, 50, 0).unwrap());
        let mut spec = ModelSpec::new(kernel.clone(), cfg);
        spec.init_std = 0.05;
        let model = Gvin::new(spec, 1).unwrap();
        let ops = model.operators(&model.prepare(g.clone(), None).unwrap()).unwrap();
        let mut r = vec![0.0; n];
        r[0] = 1.0;
        let secs = time_call(|| {
            std::hint::black_box(value_iterate(&r, &ops, &g, &cfg).unwrap());
        });
        let e = g.edge_count();
        per_unit.push(secs / (cfg.k * e) as f64);
        detail.push(format!("|E|={e}: {:.1}us", secs * 1e6));
    }
    let ratio = per_unit.iter().copied().fold(0.0, f64::max) / per_unit.iter().copied().fold(f64::INFINITY, f64::min);
    v.record(
        11,
        "value iteration cost linear in K|E|",
        ratio <= LINEARITY_FACTOR,
        format!("{}; per-unit spread {ratio:.2} <= {LINEARITY_FACTOR}", detail.join(", ")),
    );
}

fn criterion_12(v: &mut Verdicts, runs: &mut Runs) {
    let same = |a: &TrainOutcome, b: &TrainOutcome| {
        a.model.to_json() == b.model.to_json() && metrics_csv(&a.log) == metrics_csv(&b.log)
    };
    let rl_again = run_rl(TrainMode::RlEpisodic);
    let rl_same = same(&rl(runs).0, &rl_again.0);
    let il_again = run_il();
    let il_same = same(&il(runs).0, &il_again.0);
    v.record(
        12,
        "determinism",
        rl_same && il_same,
        format!("episodic RL checkpoint and log identical: {rl_same}; imitation identical: {il_same}"),
    );
}

fn main() {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut v = Verdicts { failed: 0 };
    let mut runs = Runs::default();
    if wants(1) {
        criterion_1(&mut v);
    }
    if wants(2) {
        criterion_2(&mut v);
    }
    if wants(3) {
        criterion_3(&mut v);
    }
    if wants(4) {
        criterion_4(&mut v);
    }
    if wants(5) {
        criterion_5(&mut v);
    }
    if wants(6) {
        criterion_6(&mut v, &mut runs);
    }
    if wants(7) {
        criterion_7(&mut v, &mut runs);
    }
    if wants(8) {
        criterion_8(&mut v, &mut runs);
    }
    if wants(9) {
        criterion_9(&mut v, &mut runs);
    }
    if wants(10) {
        criterion_10(&mut v);
    }
    if wants(11) {
        criterion_11(&mut v);
    }
    if wants(12) {
        criterion_12(&mut v, &mut runs);
    }
    if v.failed > 0 {
        println!("{} acceptance criteria failed", v.failed);
        std::process::exit(1);
    }
}
