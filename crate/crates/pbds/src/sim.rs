//! Manifold-aware trajectory integration: RK4 on the policy ODE in chart
//! coordinates, chart switching between steps, energy monitoring, and
//! convergence detection.

use crate::error::{Error, Result};
use crate::manifold::{
    chart_to_embedding, select_chart, transition_tangent, ChartPoint,
    ChartScheme, ManifoldDescriptor, TangentState,
};
use crate::policy::PolicyOutput;
use crate::riemannian::invert_metric;
use crate::task::{TaskKind, TaskSpec};
use nalgebra::DVector;

/// Per-step upper bound on an energy increase before it counts as a
/// monotonicity violation.
pub const LYAPUNOV_STEP_TOL: f64 = 1e-8;

/// Equilibrium surrogate: metric gradients of active-task potentials must be
/// below this norm at a converged state.
pub const EQUILIBRIUM_GRAD_TOL: f64 = 1e-6;

/// Hysteresis band on the deciding embedded coordinate for hemisphere chart
/// switching, to prevent chatter at the equator.
const HEMISPHERE_HYSTERESIS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub method: Method,
    pub chart_scheme: ChartScheme,
    pub velocity_stop_eps: f64,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > self.dt) {
            return Err(Error::Unsupported(format!(
                "integrator requires 0 < dt < horizon (dt={}, horizon={})",
                self.dt, self.horizon
            )));
        }
        Ok(())
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 1e-3,
            horizon: 20.0,
            method: Method::Rk4,
            chart_scheme: ChartScheme::Hemisphere,
            velocity_stop_eps: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Abort {
    ConstraintViolated { task: String, distance: f64 },
    NonFinite { detail: String },
    ChartSingularity { detail: String },
    /// The policy could no longer be evaluated (typically a metric driven
    /// singular by diverging baseline dynamics).
    PolicyFailure { detail: String },
}

#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub mass_condition: f64,
    pub active_tasks: usize,
}

/// Time-stamped states in chart and embedded coordinates plus energy values.
/// `times[i]`, `states[i]`, `embedded[i]`, `lyapunov[i]` all refer to the
/// same instant; `diagnostics[i]` covers the step leaving it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<TangentState>,
    pub embedded: Vec<DVector<f64>>,
    pub lyapunov: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub abort: Option<Abort>,
}

impl Trajectory {
    pub fn final_state(&self) -> &TangentState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

/// Energy of a state under the task set:
/// `V = sum_i 1/2 |Jf_i v|^2_{g_i(f_i(p))} + Phi_i(f_i(p))`.
pub fn lyapunov_value(tasks: &[TaskSpec], state: &TangentState) -> Result<f64> {
    let mut v = 0.0;
    for task in tasks {
        let (y, _, ydot) = task.image(state)?;
        let g = task.metric.matrix(&y);
        v += 0.5 * (ydot.transpose() * g * &ydot)[(0, 0)] + task.potential.value(&y);
    }
    Ok(v)
}

/// Integrates the policy ODE from `initial`. The policy is evaluated without
/// chart switching inside a step; between steps the chart scheme may move
/// the state to another chart, and points on embedded-sphere factors are
/// re-normalized through an embedding round trip.
pub fn integrate<F>(
    policy: F,
    tasks: &[TaskSpec],
    manifold: &ManifoldDescriptor,
    initial: &TangentState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory>
where
    F: FnMut(&TangentState) -> Result<PolicyOutput>,
{
    let mut policy = policy;
    cfg.validate()?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let dt = cfg.dt;

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        embedded: Vec::with_capacity(steps + 1),
        lyapunov: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps),
        abort: None,
    };

    let mut state = initial.clone();
    record(&mut traj, 0.0, &state, tasks, manifold)?;

    for step in 0..steps {
        if let Some(abort) = constraint_abort(tasks, &state)? {
            traj.abort = Some(abort);
            break;
        }

        let step_result = match cfg.method {
            Method::Rk4 => rk4_step(&mut policy, manifold, &state, dt),
            Method::Euler => euler_step(&mut policy, manifold, &state, dt),
        };
        let (mut next, diag) = match step_result {
            Ok(v) => v,
            Err(Error::ConstraintViolated { task, distance }) => {
                traj.abort = Some(Abort::ConstraintViolated { task, distance });
                break;
            }
            Err(Error::NonPositiveCoordinate(x)) => {
                traj.abort = Some(Abort::ConstraintViolated {
                    task: "chart domain".into(),
                    distance: x,
                });
                break;
            }
            Err(Error::NonFinite(detail)) => {
                traj.abort = Some(Abort::NonFinite { detail });
                break;
            }
            Err(Error::SingularTransition(detail)) => {
                traj.abort = Some(Abort::ChartSingularity { detail });
                break;
            }
            Err(e @ Error::SingularMetric { .. }) => {
                traj.abort = Some(Abort::PolicyFailure {
                    detail: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        traj.diagnostics.push(diag);

        if !next.point.coords.iter().all(|x| x.is_finite())
            || !next.velocity.iter().all(|x| x.is_finite())
        {
            traj.abort = Some(Abort::NonFinite {
                detail: "state after step".into(),
            });
            break;
        }

        // drift correction through the embedding, then chart policy
        next.point = crate::manifold::renormalize_point(manifold, &next.point)?;
        let e = chart_to_embedding(manifold, &next.point)?;
        match switch_chart(manifold, &next, &e.coords, cfg.chart_scheme) {
            Ok(switched) => next = switched,
            Err(Error::SingularTransition(detail)) => {
                traj.abort = Some(Abort::ChartSingularity { detail });
                break;
            }
            Err(e) => return Err(e),
        }

        state = next;
        record(&mut traj, (step + 1) as f64 * dt, &state, tasks, manifold)?;
    }

    Ok(traj)
}

fn record(
    traj: &mut Trajectory,
    t: f64,
    state: &TangentState,
    tasks: &[TaskSpec],
    manifold: &ManifoldDescriptor,
) -> Result<()> {
    traj.times.push(t);
    traj.embedded
        .push(chart_to_embedding(manifold, &state.point)?.coords);
    traj.lyapunov.push(lyapunov_value(tasks, state)?);
    traj.states.push(state.clone());
    Ok(())
}

fn constraint_abort(tasks: &[TaskSpec], state: &TangentState) -> Result<Option<Abort>> {
    for task in tasks {
        if task.kind != TaskKind::Constraint {
            continue;
        }
        match task.map.eval(&state.point) {
            Ok(y) => {
                if y.coords[0] <= 0.0 {
                    return Ok(Some(Abort::ConstraintViolated {
                        task: task.name.clone(),
                        distance: y.coords[0],
                    }));
                }
            }
            Err(Error::NonPositiveCoordinate(x)) => {
                return Ok(Some(Abort::ConstraintViolated {
                    task: task.name.clone(),
                    distance: x,
                }))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

type StepOutput = (TangentState, StepDiagnostics);

fn eval_accel<F>(
    policy: &mut F,
    manifold: &ManifoldDescriptor,
    chart: usize,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, StepDiagnostics)>
where
    F: FnMut(&TangentState) -> Result<PolicyOutput>,
{
    let state = TangentState::new(ChartPoint::new(manifold, chart, q.clone())?, v.clone())?;
    let out = policy(&state)?;
    if !out.acceleration.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("policy acceleration".into()));
    }
    let diag = StepDiagnostics {
        mass_condition: out.diagnostics.mass_condition,
        active_tasks: out.diagnostics.active_tasks,
    };
    Ok((out.acceleration, diag))
}

fn rk4_step<F>(
    policy: &mut F,
    manifold: &ManifoldDescriptor,
    state: &TangentState,
    dt: f64,
) -> Result<StepOutput>
where
    F: FnMut(&TangentState) -> Result<PolicyOutput>,
{
    let chart = state.point.chart;
    let (q, v) = (&state.point.coords, &state.velocity);

    let (k1v, diag) = eval_accel(policy, manifold, chart, q, v)?;
    let k1q = v.clone();

    let q2 = q + &k1q * (dt / 2.0);
    let v2 = v + &k1v * (dt / 2.0);
    let (k2v, _) = eval_accel(policy, manifold, chart, &q2, &v2)?;
    let k2q = v2;

    let q3 = q + &k2q * (dt / 2.0);
    let v3 = v + &k2v * (dt / 2.0);
    let (k3v, _) = eval_accel(policy, manifold, chart, &q3, &v3)?;
    let k3q = v3;

    let q4 = q + &k3q * dt;
    let v4 = v + &k3v * dt;
    let (k4v, _) = eval_accel(policy, manifold, chart, &q4, &v4)?;
    let k4q = v4;

    let nq = q + (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (dt / 6.0);
    let nv = v + (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (dt / 6.0);
    Ok((
        TangentState::new(ChartPoint::new(manifold, chart, nq)?, nv)?,
        diag,
    ))
}

fn euler_step<F>(
    policy: &mut F,
    manifold: &ManifoldDescriptor,
    state: &TangentState,
    dt: f64,
) -> Result<StepOutput>
where
    F: FnMut(&TangentState) -> Result<PolicyOutput>,
{
    let chart = state.point.chart;
    let (q, v) = (&state.point.coords, &state.velocity);
    let (a, diag) = eval_accel(policy, manifold, chart, q, v)?;
    Ok((
        TangentState::new(
            ChartPoint::new(manifold, chart, q + v * dt)?,
            v + a * dt,
        )?,
        diag,
    ))
}

/// Applies the chart scheme after a step. The hemisphere scheme only leaves
/// the current chart once the deciding embedded coordinate crosses the
/// hysteresis band.
fn switch_chart(
    manifold: &ManifoldDescriptor,
    state: &TangentState,
    embedded: &DVector<f64>,
    scheme: ChartScheme,
) -> Result<TangentState> {
    let target = match scheme {
        ChartScheme::Fixed(c) => c,
        ChartScheme::Hemisphere => hysteresis_chart(manifold, state.point.chart, embedded)?,
    };
    if target == state.point.chart {
        return Ok(state.clone());
    }
    transition_tangent(manifold, state, target)
}

fn hysteresis_chart(
    manifold: &ManifoldDescriptor,
    current: usize,
    embedded: &DVector<f64>,
) -> Result<usize> {
    match manifold {
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let last = embedded[manifold.embedding_dim() - 1];
            let desired = if last >= 0.0 { 0 } else { 1 };
            if desired != current && last.abs() <= HEMISPHERE_HYSTERESIS {
                Ok(current)
            } else {
                Ok(desired)
            }
        }
        ManifoldDescriptor::Product(fs) => {
            let current_parts = crate::manifold::decode_product_chart(manifold, current)?;
            let mut parts = Vec::with_capacity(fs.len());
            let mut off = 0;
            for (f, cur) in fs.iter().zip(current_parts) {
                let sub = embedded.rows(off, f.embedding_dim()).into_owned();
                parts.push(hysteresis_chart(f, cur, &sub)?);
                off += f.embedding_dim();
            }
            crate::manifold::encode_product_chart(manifold, &parts)
        }
        _ => {
            let e = crate::manifold::EmbeddedPoint::new(manifold, embedded.clone())?;
            select_chart(manifold, &e, ChartScheme::Hemisphere)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub max_tail_speed: f64,
    pub max_equilibrium_gradient: f64,
    pub lyapunov_violations: usize,
    pub max_step_increase: f64,
}

/// Checks convergence to an equilibrium over the trajectory tail: speeds
/// below the stop threshold and, for every task with nonzero weight at rest,
/// a vanishing metric gradient of its potential. Also counts energy
/// increases beyond the per-step tolerance over the whole trajectory.
pub fn check_convergence(
    traj: &Trajectory,
    tasks: &[TaskSpec],
    tail_fraction: f64,
    velocity_stop_eps: f64,
) -> Result<ConvergenceReport> {
    let n = traj.states.len();
    if n == 0 {
        return Err(Error::Unsupported("empty trajectory".into()));
    }
    let tail_start = ((n as f64) * (1.0 - tail_fraction)).floor() as usize;
    let tail_start = tail_start.min(n - 1);

    let mut max_tail_speed: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for state in &traj.states[tail_start..] {
        max_tail_speed = max_tail_speed.max(state.velocity.norm());
        let rest = TangentState::new(state.point.clone(), DVector::zeros(state.point.dim()))?;
        for task in tasks {
            let (y, _, ydot) = task.image(&rest)?;
            if task.weight.matrix(&y, &ydot).amax() == 0.0 {
                continue;
            }
            let g_inv = invert_metric(&task.metric.matrix(&y))?;
            max_grad = max_grad.max((g_inv * task.potential.gradient(&y)).norm());
        }
    }

    let mut violations = 0usize;
    let mut max_step_increase: f64 = 0.0;
    for w in traj.lyapunov.windows(2) {
        let inc = w[1] - w[0];
        max_step_increase = max_step_increase.max(inc);
        if inc > LYAPUNOV_STEP_TOL {
            violations += 1;
        }
    }

    Ok(ConvergenceReport {
        converged: traj.completed()
            && max_tail_speed < velocity_stop_eps
            && max_grad < EQUILIBRIUM_GRAD_TOL,
        max_tail_speed,
        max_equilibrium_gradient: max_grad,
        lyapunov_violations: violations,
        max_step_increase,
    })
}

/// Maximum embedded-space distance between two trajectories on the same
/// time grid.
pub fn trajectory_deviation(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    if t1.times.len() != t2.times.len() {
        return Err(Error::DimensionMismatch {
            expected: t1.times.len(),
            got: t2.times.len(),
        });
    }
    let mut max = 0.0f64;
    for (a, b) in t1.embedded.iter().zip(&t2.embedded) {
        max = max.max((a - b).norm());
    }
    Ok(max)
}
