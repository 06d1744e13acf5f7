//! Scenario files: JSON descriptions of manifold, task set, initial state,
//! integrator, and engine, plus the runners behind the command-line front
//! end (single runs, the chart-consistency experiment, and the policy
//! throughput benchmark).

use crate::error::{Error, Result};
use crate::gds::gds_combine;
use crate::manifold::{
    embedding_jacobian, embedding_to_chart, select_chart, ChartPoint, ChartScheme, EmbeddedPoint,
    ManifoldDescriptor, TangentState,
};
use crate::policy::{combine, pseudo_inverse, PolicyOutput};
use crate::sim::{
    check_convergence, integrate, trajectory_deviation, IntegratorConfig, Method, Trajectory,
};
use crate::task::{
    make_attractor_task, make_constraint_task, make_damping_task, AmbientDistanceMap,
    BarrierParams, TaskKind, TaskSpec,
};
use crate::tree::TaskTree;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

/// Agreement required between tree and flat evaluation on the first step of
/// a `pbds_tree` run.
const TREE_FLAT_FIRST_STEP_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario schema error: {0}")]
    Schema(String),
    #[error("scenario build error: {0}")]
    Build(#[from] Error),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldJson {
    Euclidean { dim: usize },
    PositiveReals,
    Circle,
    Sphere2,
    Product { factors: Vec<ManifoldJson> },
}

impl ManifoldJson {
    fn build(&self) -> ManifoldDescriptor {
        match self {
            ManifoldJson::Euclidean { dim } => ManifoldDescriptor::Euclidean { dim: *dim },
            ManifoldJson::PositiveReals => ManifoldDescriptor::PositiveReals,
            ManifoldJson::Circle => ManifoldDescriptor::Circle,
            ManifoldJson::Sphere2 => ManifoldDescriptor::Sphere2,
            ManifoldJson::Product { factors } => {
                ManifoldDescriptor::Product(factors.iter().map(|f| f.build()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskJson {
    Attractor {
        goal: Vec<f64>,
    },
    Damping {
        c: f64,
    },
    Obstacle {
        center: Vec<f64>,
        radius: f64,
        a: f64,
        b: f64,
        /// Activation radius; `null` activates at any distance.
        beta: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialJson {
    /// Embedded (chart-free) position.
    pub position: Vec<f64>,
    /// Embedded velocity, projected onto the tangent space.
    #[serde(default)]
    pub velocity: Option<Vec<f64>>,
    /// Velocity given directly in the initial chart of the active scheme.
    #[serde(default)]
    pub chart_velocity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ChartSchemeJson {
    Named(String),
    Fixed { fixed: usize },
}

impl ChartSchemeJson {
    fn build(&self) -> std::result::Result<ChartScheme, ScenarioError> {
        match self {
            ChartSchemeJson::Named(s) if s == "hemisphere" => Ok(ChartScheme::Hemisphere),
            ChartSchemeJson::Named(s) => Err(ScenarioError::Schema(format!(
                "unknown chart scheme `{s}` (expected \"hemisphere\" or {{\"fixed\": id}})"
            ))),
            ChartSchemeJson::Fixed { fixed } => Ok(ChartScheme::Fixed(*fixed)),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorJson {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_scheme")]
    pub chart_scheme: ChartSchemeJson,
    #[serde(default = "default_stop_eps")]
    pub velocity_stop_eps: f64,
}

fn default_method() -> String {
    "rk4".into()
}

fn default_scheme() -> ChartSchemeJson {
    ChartSchemeJson::Named("hemisphere".into())
}

fn default_stop_eps() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Pbds,
    PbdsTree,
    Gds,
}

impl std::str::FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pbds" => Ok(Engine::Pbds),
            "pbds_tree" => Ok(Engine::PbdsTree),
            "gds" => Ok(Engine::Gds),
            other => Err(format!("unknown engine `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AssertsJson {
    /// Worst-run final goal distance must stay below this.
    #[serde(default)]
    pub final_goal_distance: Option<f64>,
    /// Minimum obstacle clearance must stay strictly above this.
    #[serde(default)]
    pub min_obstacle_distance: Option<f64>,
    /// Total energy-increase violations allowed across all runs.
    #[serde(default)]
    pub lyapunov_violations: Option<usize>,
    /// Maximum pairwise deviation allowed in the consistency experiment.
    #[serde(default)]
    pub consistency_deviation: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub manifold: ManifoldJson,
    pub tasks: Vec<TaskJson>,
    pub initial: InitialJson,
    /// Extra embedded initial velocities; each becomes its own run.
    #[serde(default)]
    pub velocity_directions: Vec<Vec<f64>>,
    /// Seeds for randomized initial velocity directions (unit tangent scaled
    /// by `speed`), each its own run.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub speed: Option<f64>,
    pub integrator: IntegratorJson,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default)]
    pub asserts: AssertsJson,
}

fn default_engine() -> Engine {
    Engine::Pbds
}

impl Scenario {
    pub fn from_json_str(s: &str) -> std::result::Result<Scenario, ScenarioError> {
        serde_json::from_str(s).map_err(|e| ScenarioError::Schema(e.to_string()))
    }

    pub fn from_file(path: &Path) -> std::result::Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Schema(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn build(&self) -> std::result::Result<BuiltScenario, ScenarioError> {
        let manifold = self.manifold.build();
        let mut tasks = Vec::new();
        let mut obstacle_index = 0usize;
        for t in &self.tasks {
            match t {
                TaskJson::Attractor { goal } => {
                    let goal =
                        EmbeddedPoint::new(&manifold, DVector::from_row_slice(goal)).map_err(|e| {
                            ScenarioError::Schema(format!("attractor goal: {e}"))
                        })?;
                    tasks.push(make_attractor_task(&manifold, goal)?);
                }
                TaskJson::Damping { c } => tasks.push(make_damping_task(&manifold, *c)?),
                TaskJson::Obstacle {
                    center,
                    radius,
                    a,
                    b,
                    beta,
                } => {
                    let dist = AmbientDistanceMap::new(
                        manifold.clone(),
                        DVector::from_row_slice(center),
                        *radius,
                    )?;
                    let params = BarrierParams::new(*a, *b, beta.unwrap_or(f64::INFINITY))?;
                    let mut task = make_constraint_task(
                        &format!("obstacle[{obstacle_index}]"),
                        std::sync::Arc::new(dist),
                        params,
                        None,
                    )?;
                    task.name = format!("obstacle[{obstacle_index}]");
                    obstacle_index += 1;
                    tasks.push(task);
                }
            }
        }
        if tasks.is_empty() {
            return Err(ScenarioError::Schema("scenario has no tasks".into()));
        }

        let method = match self.integrator.method.as_str() {
            "rk4" => Method::Rk4,
            "euler" => Method::Euler,
            other => {
                return Err(ScenarioError::Schema(format!(
                    "unknown integrator method `{other}`"
                )))
            }
        };
        let cfg = IntegratorConfig {
            dt: self.integrator.dt,
            horizon: self.integrator.horizon,
            method,
            chart_scheme: self.integrator.chart_scheme.build()?,
            velocity_stop_eps: self.integrator.velocity_stop_eps,
        };
        cfg.validate()?;

        let position = EmbeddedPoint::new(&manifold, DVector::from_row_slice(&self.initial.position))
            .map_err(|e| ScenarioError::Schema(format!("initial position: {e}")))?;

        let mut velocities = Vec::new();
        match (&self.initial.velocity, &self.initial.chart_velocity) {
            (Some(v), None) => velocities.push(InitialVelocity::Embedded(DVector::from_row_slice(v))),
            (None, Some(v)) => velocities.push(InitialVelocity::Chart(DVector::from_row_slice(v))),
            (None, None) if self.velocity_directions.is_empty() && self.seeds.is_empty() => {
                velocities.push(InitialVelocity::Chart(DVector::zeros(manifold.dim())))
            }
            (None, None) => {}
            (Some(_), Some(_)) => {
                return Err(ScenarioError::Schema(
                    "give either `velocity` or `chart_velocity`, not both".into(),
                ))
            }
        }
        for v in &self.velocity_directions {
            velocities.push(InitialVelocity::Embedded(DVector::from_row_slice(v)));
        }
        if !self.seeds.is_empty() {
            let speed = self.speed.unwrap_or(1.0);
            for &seed in &self.seeds {
                velocities.push(InitialVelocity::Seeded { seed, speed });
            }
        }

        Ok(BuiltScenario {
            name: self.name.clone(),
            manifold,
            tasks,
            cfg,
            engine: self.engine,
            position,
            velocities,
            asserts: self.asserts.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum InitialVelocity {
    Embedded(DVector<f64>),
    Chart(DVector<f64>),
    Seeded { seed: u64, speed: f64 },
}

pub struct BuiltScenario {
    pub name: String,
    pub manifold: ManifoldDescriptor,
    pub tasks: Vec<TaskSpec>,
    pub cfg: IntegratorConfig,
    pub engine: Engine,
    pub position: EmbeddedPoint,
    pub velocities: Vec<InitialVelocity>,
    pub asserts: AssertsJson,
}

impl BuiltScenario {
    /// Initial chart state for a given scheme and velocity selector.
    pub fn initial_state(&self, scheme: ChartScheme, vel: &InitialVelocity) -> Result<TangentState> {
        let chart = select_chart(&self.manifold, &self.position, scheme)?;
        let point = embedding_to_chart(&self.manifold, &self.position, Some(chart))?;
        let j = embedding_jacobian(&self.manifold, &point)?;
        let chart_velocity = match vel {
            InitialVelocity::Chart(v) => v.clone(),
            InitialVelocity::Embedded(v) => {
                if v.len() != self.manifold.embedding_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.manifold.embedding_dim(),
                        got: v.len(),
                    });
                }
                pseudo_inverse(&j, 1e-12) * v
            }
            InitialVelocity::Seeded { seed, speed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                // random ambient direction projected to the tangent space
                let dir = DVector::from_fn(self.manifold.embedding_dim(), |_, _| {
                    rng.random_range(-1.0..1.0)
                });
                let v = pseudo_inverse(&j, 1e-12) * dir;
                let emb = &j * &v;
                let norm = emb.norm();
                if norm < 1e-9 {
                    return Err(Error::Unsupported(format!(
                        "seed {seed} produced a degenerate initial direction"
                    )));
                }
                v * (*speed / norm)
            }
        };
        TangentState::new(point, chart_velocity)
    }

    pub fn policy(&self, engine: Engine) -> Result<PolicyFn<'_>> {
        match engine {
            Engine::Pbds => Ok(PolicyFn::Flat(&self.tasks)),
            Engine::Gds => Ok(PolicyFn::Gds(&self.tasks)),
            Engine::PbdsTree => Ok(PolicyFn::Tree(TaskTree::flat(&self.tasks))),
        }
    }
}

pub enum PolicyFn<'a> {
    Flat(&'a [TaskSpec]),
    Gds(&'a [TaskSpec]),
    Tree(TaskTree),
}

impl PolicyFn<'_> {
    pub fn eval(&self, s: &TangentState) -> Result<PolicyOutput> {
        match self {
            PolicyFn::Flat(tasks) => combine(tasks, s),
            PolicyFn::Gds(tasks) => gds_combine(tasks, s),
            PolicyFn::Tree(tree) => tree.evaluate(s),
        }
    }
}

/// The report written by `run`, one JSON object per scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub final_goal_distance: Option<f64>,
    pub min_obstacle_distance: Option<f64>,
    pub lyapunov_violations: usize,
    pub evals_per_second: f64,
    pub converged: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectories: Vec<Trajectory>,
    pub aborts: Vec<String>,
    pub assertion_failures: Vec<String>,
}

fn goal_distance(tasks: &[TaskSpec], state: &TangentState) -> Result<Option<f64>> {
    for task in tasks {
        if task.kind == TaskKind::Attractor {
            return Ok(Some(task.map.eval(&state.point)?.coords[0]));
        }
    }
    Ok(None)
}

fn min_obstacle_distance(tasks: &[TaskSpec], traj: &Trajectory) -> Result<Option<f64>> {
    let mut min: Option<f64> = None;
    for task in tasks {
        if task.kind != TaskKind::Constraint {
            continue;
        }
        for state in &traj.states {
            let d = task.map.eval(&state.point)?.coords[0];
            min = Some(min.map_or(d, |m: f64| m.min(d)));
        }
    }
    Ok(min)
}

/// Integrates every configured run of the scenario and aggregates the
/// worst-case metrics. A `pbds_tree` engine first checks tree/flat
/// agreement at the initial state.
pub fn run_scenario(built: &BuiltScenario) -> Result<RunOutcome> {
    let mut trajectories = Vec::new();
    let mut aborts = Vec::new();
    let mut assertion_failures = Vec::new();

    let mut worst_goal: Option<f64> = None;
    let mut min_obstacle: Option<f64> = None;
    let mut violations = 0usize;
    let mut all_converged = true;
    let mut evals = 0u64;
    let mut eval_time = Duration::ZERO;

    for vel in &built.velocities {
        let initial = built.initial_state(built.cfg.chart_scheme, vel)?;
        let policy = built.policy(built.engine)?;

        if built.engine == Engine::PbdsTree {
            let tree_out = policy.eval(&initial)?;
            let flat_out = combine(&built.tasks, &initial)?;
            let diff = (&tree_out.acceleration - &flat_out.acceleration).norm();
            if diff > TREE_FLAT_FIRST_STEP_TOL {
                assertion_failures.push(format!(
                    "tree/flat first-step disagreement: {diff:.3e} > {TREE_FLAT_FIRST_STEP_TOL:.0e}"
                ));
                continue;
            }
        }

        let traj = integrate(
            |s| {
                let t0 = Instant::now();
                let out = policy.eval(s);
                eval_time += t0.elapsed();
                evals += 1;
                out
            },
            &built.tasks,
            &built.manifold,
            &initial,
            &built.cfg,
        )?;

        if let Some(abort) = &traj.abort {
            aborts.push(format!("{abort:?}"));
            all_converged = false;
        } else {
            let report = check_convergence(&traj, &built.tasks, 0.1, built.cfg.velocity_stop_eps)?;
            violations += report.lyapunov_violations;
            all_converged &= report.converged;
            if let Some(d) = goal_distance(&built.tasks, traj.final_state())? {
                worst_goal = Some(worst_goal.map_or(d, |w: f64| w.max(d)));
            }
        }
        if let Some(d) = min_obstacle_distance(&built.tasks, &traj)? {
            min_obstacle = Some(min_obstacle.map_or(d, |m: f64| m.min(d)));
        }
        trajectories.push(traj);
    }

    let report = RunReport {
        final_goal_distance: worst_goal,
        min_obstacle_distance: min_obstacle,
        lyapunov_violations: violations,
        evals_per_second: if eval_time.is_zero() {
            0.0
        } else {
            evals as f64 / eval_time.as_secs_f64()
        },
        converged: all_converged && aborts.is_empty(),
    };

    if let (Some(limit), Some(worst)) = (built.asserts.final_goal_distance, worst_goal) {
        if worst > limit {
            assertion_failures.push(format!("final goal distance {worst:.3e} > {limit:.3e}"));
        }
    }
    if built.asserts.final_goal_distance.is_some() && worst_goal.is_none() {
        assertion_failures.push("goal-distance assertion without an attractor task".into());
    }
    if let (Some(floor), Some(min)) = (built.asserts.min_obstacle_distance, min_obstacle) {
        if min <= floor {
            assertion_failures.push(format!("min obstacle distance {min:.3e} <= {floor:.3e}"));
        }
    }
    if let Some(max_viol) = built.asserts.lyapunov_violations {
        if violations > max_viol {
            assertion_failures.push(format!(
                "lyapunov violations {violations} > allowed {max_viol}"
            ));
        }
    }
    if !aborts.is_empty() {
        all_converged = false;
        let _ = all_converged;
    }

    Ok(RunOutcome {
        report,
        trajectories,
        aborts,
        assertion_failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub engine: Engine,
    /// Pairwise max embedded deviations, keyed by scheme names.
    pub deviations: Vec<(String, String, f64)>,
    pub max_pairwise: f64,
    pub asserted_bound: Option<f64>,
    pub passed: bool,
}

/// Runs the scenario under fixed-south, fixed-north, and hemisphere chart
/// schemes and reports pairwise trajectory deviations. The invariant engine
/// asserts its bound; the baseline engine only reports.
pub fn consistency_test(built: &BuiltScenario, engine: Engine) -> Result<ConsistencyReport> {
    if built.manifold.chart_count() < 2 {
        return Err(Error::Unsupported(
            "consistency test requires a multi-chart manifold".into(),
        ));
    }
    let schemes = [
        ("fixed_south", ChartScheme::Fixed(0)),
        ("fixed_north", ChartScheme::Fixed(1)),
        ("hemisphere", ChartScheme::Hemisphere),
    ];
    let vel = built
        .velocities
        .first()
        .cloned()
        .unwrap_or_else(|| InitialVelocity::Chart(DVector::zeros(built.manifold.dim())));

    let mut trajectories = Vec::new();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (name, scheme) in schemes {
            let vel = vel.clone();
            handles.push((
                name,
                scope.spawn(move || -> Result<Trajectory> {
                    let mut cfg = built.cfg;
                    cfg.chart_scheme = scheme;
                    let initial = built.initial_state(scheme, &vel)?;
                    let policy = built.policy(engine)?;
                    integrate(
                        |s| policy.eval(s),
                        &built.tasks,
                        &built.manifold,
                        &initial,
                        &cfg,
                    )
                }),
            ));
        }
        for (name, handle) in handles {
            let traj = handle.join().expect("run thread panicked")?;
            trajectories.push((name.to_string(), traj));
        }
        Ok(())
    })?;

    // A diverging baseline run can abort early; deviations are then measured
    // over the common prefix of the time grids.
    let prefix_deviation = |a: &Trajectory, b: &Trajectory| -> f64 {
        let n = a.embedded.len().min(b.embedded.len());
        let mut max = 0.0f64;
        for k in 0..n {
            max = max.max((&a.embedded[k] - &b.embedded[k]).norm());
        }
        max
    };
    let mut deviations = Vec::new();
    let mut max_pairwise = 0.0f64;
    for i in 0..trajectories.len() {
        for j in (i + 1)..trajectories.len() {
            let (a, b) = (&trajectories[i].1, &trajectories[j].1);
            let d = if a.times.len() == b.times.len() {
                trajectory_deviation(a, b)?
            } else {
                prefix_deviation(a, b)
            };
            max_pairwise = max_pairwise.max(d);
            deviations.push((trajectories[i].0.clone(), trajectories[j].0.clone(), d));
        }
    }

    let asserted_bound = if engine == Engine::Pbds {
        Some(built.asserts.consistency_deviation.unwrap_or(1e-6))
    } else {
        None
    };
    let passed = asserted_bound.map_or(true, |b| max_pairwise < b);
    Ok(ConsistencyReport {
        engine,
        deviations,
        max_pairwise,
        asserted_bound,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineBench {
    pub evals_per_second: f64,
    pub mean_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub flat: Option<EngineBench>,
    pub tree: Option<EngineBench>,
}

/// Times repeated policy evaluations (no integration) at randomized states
/// near the initial state, for the flat and tree engines.
pub fn bench(built: &BuiltScenario, iterations: usize, seed: u64) -> Result<BenchReport> {
    if iterations == 0 {
        return Ok(BenchReport {
            iterations: 0,
            flat: None,
            tree: None,
        });
    }

    let vel = built
        .velocities
        .first()
        .cloned()
        .unwrap_or_else(|| InitialVelocity::Chart(DVector::zeros(built.manifold.dim())));
    let base = built.initial_state(built.cfg.chart_scheme, &vel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = built.manifold.dim();

    let mut states = Vec::with_capacity(iterations);
    let mut guard = 0;
    while states.len() < iterations {
        guard += 1;
        if guard > iterations * 50 {
            return Err(Error::Unsupported(
                "could not sample enough valid states for the benchmark".into(),
            ));
        }
        let q = &base.point.coords + DVector::from_fn(m, |_, _| rng.random_range(-0.3..0.3));
        let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let Ok(point) = ChartPoint::new(&built.manifold, base.point.chart, q) else {
            continue;
        };
        let state = TangentState::new(point, v)?;
        if combine(&built.tasks, &state).is_ok() {
            states.push(state);
        }
    }

    let time_engine = |policy: &PolicyFn| -> Result<EngineBench> {
        let mut times = Vec::with_capacity(states.len());
        let t_all = Instant::now();
        for s in &states {
            let t0 = Instant::now();
            let out = policy.eval(s)?;
            times.push(t0.elapsed().as_secs_f64() * 1e6);
            std::hint::black_box(out.acceleration);
        }
        let total = t_all.elapsed().as_secs_f64();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let p99 = times[((times.len() as f64 * 0.99) as usize).min(times.len() - 1)];
        Ok(EngineBench {
            evals_per_second: states.len() as f64 / total,
            mean_us: mean,
            p99_us: p99,
        })
    };

    let flat = time_engine(&built.policy(Engine::Pbds)?)?;
    let tree = time_engine(&built.policy(Engine::PbdsTree)?)?;
    Ok(BenchReport {
        iterations,
        flat: Some(flat),
        tree: Some(tree),
    })
}

/// CSV export: `t, chart_id, q1..qm, v1..vm, e1..ed, V` per step.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = traj.states[0].point.dim();
    let d = traj.embedded[0].len();
    let mut header = vec!["t".to_string(), "chart_id".to_string()];
    header.extend((1..=m).map(|i| format!("q{i}")));
    header.extend((1..=m).map(|i| format!("v{i}")));
    header.extend((1..=d).map(|i| format!("e{i}")));
    header.push("V".to_string());
    writeln!(file, "{}", header.join(","))?;
    for i in 0..traj.times.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(format!("{:.17e}", traj.times[i]));
        row.push(traj.states[i].point.chart.to_string());
        for x in traj.states[i].point.coords.iter() {
            row.push(format!("{x:.17e}"));
        }
        for x in traj.states[i].velocity.iter() {
            row.push(format!("{x:.17e}"));
        }
        for x in traj.embedded[i].iter() {
            row.push(format!("{x:.17e}"));
        }
        row.push(format!("{:.17e}", traj.lyapunov[i]));
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}

/// Bundled scenario sources, compiled into the library so tests and the CLI
/// agree on their content.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "sphere_attractor" => Some(include_str!("../scenarios/sphere_attractor.json")),
        "sphere_obstacles" => Some(include_str!("../scenarios/sphere_obstacles.json")),
        _ => None,
    }
}
