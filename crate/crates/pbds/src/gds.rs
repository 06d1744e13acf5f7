//! A minimal chart-dependent baseline built on tangent-bundle metrics: each
//! task declares a block-diagonal metric on its codomain tangent bundle in a
//! fixed home chart, and policy evaluation in any other chart transforms the
//! full bundle metric and projects back onto the coordinate velocity block.
//! That projection cannot be made invariant — the transformed velocity block
//! picks up a velocity-dependent term through the off-diagonal Jacobian block
//! of the chart transition — which is exactly the inconsistency this module
//! exists to demonstrate.

use crate::error::{Error, Result};
use crate::manifold::{
    chart_transition, chart_transition_jacobian, ChartPoint, ManifoldDescriptor, TangentState,
};
use crate::policy::{fuse, PolicyOutput, TaskAcceleration};
use crate::riemannian::{christoffel, invert_metric, Metric};
use crate::task::TaskSpec;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

type BlockFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A tangent-bundle metric given by its velocity and acceleration blocks in
/// one chart's coordinates, each evaluated at base point and velocity.
pub struct BlockVelocityMetric {
    pub gv: Arc<BlockFn>,
    pub ga: Arc<BlockFn>,
}

impl BlockVelocityMetric {
    /// Both blocks equal to one position-dependent matrix field.
    pub fn from_field<F>(field: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + Clone + 'static,
    {
        let f2 = field.clone();
        BlockVelocityMetric {
            gv: Arc::new(move |p, _v| field(p)),
            ga: Arc::new(move |p, _v| f2(p)),
        }
    }
}

/// Transforms a block-diagonal tangent-bundle metric through a chart
/// transition `phi` at `(p_hat, v_hat)`:
///
/// ```text
/// ghat = Jphi^T blockdiag(gv, ga) Jphi,
/// Jphi = [ Jphi^v    0      ]
///        [ Jphi^av   Jphi^v ],   Jphi^av_ji = v^k d2 phi^j / dp^i dp^k,
/// ```
///
/// with the off-diagonal block built by finite differences of `phi`. Returns
/// the full `2m x 2m` matrix.
pub fn transition_bundle_metric(
    g: &BlockVelocityMetric,
    phi: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    p_hat: &DVector<f64>,
    v_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let m = p_hat.len();
    let p_tilde = phi(p_hat)?;

    let h = 1e-5;
    let mut jv = DMatrix::zeros(m, m);
    for i in 0..m {
        let step = h * p_hat[i].abs().max(1.0);
        let mut up = p_hat.clone();
        let mut dn = p_hat.clone();
        up[i] += step;
        dn[i] -= step;
        jv.set_column(i, &((phi(&up)? - phi(&dn)?) / (2.0 * step)));
    }

    // second derivatives contracted with v_hat
    let mut jav = DMatrix::zeros(m, m);
    for i in 0..m {
        for k in 0..m {
            let si = h * p_hat[i].abs().max(1.0);
            let sk = h * p_hat[k].abs().max(1.0);
            let mut pp = p_hat.clone();
            let mut pm = p_hat.clone();
            let mut mp = p_hat.clone();
            let mut mm = p_hat.clone();
            pp[i] += si;
            pp[k] += sk;
            pm[i] += si;
            pm[k] -= sk;
            mp[i] -= si;
            mp[k] += sk;
            mm[i] -= si;
            mm[k] -= sk;
            let second = (phi(&pp)? - phi(&pm)? - phi(&mp)? + phi(&mm)?) / (4.0 * si * sk);
            for j in 0..m {
                jav[(j, i)] += v_hat[k] * second[j];
            }
        }
    }

    let v_tilde = &jv * v_hat;
    let gv = (g.gv)(&p_tilde, &v_tilde);
    let ga = (g.ga)(&p_tilde, &v_tilde);

    let mut out = DMatrix::zeros(2 * m, 2 * m);
    let vv = jv.transpose() * &gv * &jv + jav.transpose() * &ga * &jav;
    let va = jav.transpose() * &ga * &jv;
    let aa = jv.transpose() * &ga * &jv;
    out.view_mut((0, 0), (m, m)).copy_from(&vv);
    out.view_mut((0, m), (m, m)).copy_from(&va);
    out.view_mut((m, 0), (m, m)).copy_from(&va.transpose());
    out.view_mut((m, m), (m, m)).copy_from(&aa);
    Ok(out)
}

/// The behavior metric a task effectively uses under the baseline: the
/// velocity block of its home-chart bundle metric, transformed to the
/// current chart and projected back onto the coordinate block. The velocity
/// entering the transformation is frozen, so position derivatives (and the
/// curvature terms built from them) see only the chart-local field.
struct ProjectedVelocityBlock {
    codomain: ManifoldDescriptor,
    home_chart: usize,
    inner: Arc<dyn Metric>,
    frozen_velocity: DVector<f64>,
}

impl ProjectedVelocityBlock {
    fn gv_at(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        if p.chart == self.home_chart {
            return Ok(self.inner.matrix(p));
        }
        let p_tilde = chart_transition(&self.codomain, p, self.home_chart)?;
        let jv = chart_transition_jacobian(&self.codomain, p, self.home_chart)?;
        let jav = transition_jacobian_dot(&self.codomain, p, &self.frozen_velocity, self.home_chart)?;
        let g_home = self.inner.matrix(&p_tilde);
        Ok(jv.transpose() * &g_home * &jv + jav.transpose() * &g_home * jav)
    }
}

/// `out_ji = v^k d2 phi^j / dp^i dp^k` for the stereographic transition,
/// in closed form.
fn transition_jacobian_dot(
    m: &ManifoldDescriptor,
    p: &ChartPoint,
    v: &DVector<f64>,
    target: usize,
) -> Result<DMatrix<f64>> {
    if target == p.chart {
        return Ok(DMatrix::zeros(m.dim(), m.dim()));
    }
    match m {
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let x = &p.coords;
            let s = x.norm_squared();
            if s < 1e-24 {
                return Err(Error::SingularTransition(
                    "chart origin maps to the target chart's excluded pole".into(),
                ));
            }
            let n = m.dim();
            let xv = x.dot(v);
            let mut out = DMatrix::zeros(n, n);
            for j in 0..n {
                for i in 0..n {
                    let dij = if i == j { 1.0 } else { 0.0 };
                    out[(j, i)] = -2.0 * (dij * xv + v[i] * x[j] + v[j] * x[i]) / (s * s)
                        + 8.0 * x[i] * x[j] * xv / (s * s * s);
                }
            }
            Ok(out)
        }
        _ => Err(Error::Unsupported(
            "baseline bundle transitions are provided for stereographic charts".into(),
        )),
    }
}

impl Metric for ProjectedVelocityBlock {
    fn manifold(&self) -> &ManifoldDescriptor {
        &self.codomain
    }

    fn matrix(&self, p: &ChartPoint) -> DMatrix<f64> {
        self.gv_at(p).expect("valid chart point")
    }
}

/// Baseline fusion: identical to the invariant policy except that each
/// task's behavior metric (and the curvature terms derived from it) is the
/// chart-local projected velocity block. In a task's home chart, or on
/// single-chart codomains, it reduces to the invariant policy exactly.
pub fn gds_combine(tasks: &[TaskSpec], state: &TangentState) -> Result<PolicyOutput> {
    if tasks.is_empty() {
        return Err(Error::Unsupported("combine requires at least one task".into()));
    }
    let m = state.point.dim();
    let mut quantities = Vec::with_capacity(tasks.len());
    for task in tasks {
        let (y, jf, ydot) = task.image(state)?;
        let w_a = task.weight.matrix(&y, &ydot);
        let (n, m_) = (jf.nrows(), jf.ncols());
        if w_a.amax() == 0.0 {
            quantities.push(TaskAcceleration {
                jf,
                jf_dot: DMatrix::zeros(n, m_),
                xi: DMatrix::zeros(n, m_),
                accel: DVector::zeros(n),
                w_a,
            });
            continue;
        }

        let metric = ProjectedVelocityBlock {
            codomain: task.map.codomain().clone(),
            home_chart: 0,
            inner: task.metric.clone(),
            frozen_velocity: ydot.clone(),
        };
        let jf_dot = task.map.jacobian_dot(&state.point, &state.velocity)?;
        let gamma = christoffel(&metric, &y)?;
        let mut xi = DMatrix::zeros(n, m_);
        for k in 0..n {
            for l in 0..n {
                let mut gh = 0.0;
                for hh in 0..n {
                    gh += gamma.get(k, l, hh) * ydot[hh];
                }
                for j in 0..m_ {
                    xi[(k, j)] += gh * jf[(l, j)];
                }
            }
        }
        let g_inv = invert_metric(&metric.matrix(&y))?;
        let accel =
            g_inv * (task.force.force(&y, &ydot) - task.potential.gradient(&y))
                - (&jf_dot + &xi) * &state.velocity;
        quantities.push(TaskAcceleration {
            jf,
            jf_dot,
            xi,
            accel,
            w_a,
        });
    }
    fuse(m, &quantities)
}
