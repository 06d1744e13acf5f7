//! Tasks: a smooth map into a task manifold together with a behavior metric,
//! a potential, dissipative forces, and a weighting pseudometric, plus
//! constructors for the standard families (attractor, damper, metric-barrier
//! constraint, distance-toggled wrappers).

use crate::error::{Error, Result};
use crate::manifold::{
    chart_to_embedding, chart_transition, product_join, product_split, product_split_velocity,
    ChartPoint, EmbeddedPoint, ManifoldDescriptor, TangentState,
};
use crate::riemannian::{
    pullback_through_embedding, AmbientComponents, BarrierMetric, ConstantMetric, ConstantWeight,
    DissipativeForce, Metric, Potential, SquaredNormPotential, Tensor3, WeightField, ZeroForce,
    ZeroPotential, FD_STEP,
};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Jacobian entries are treated as exactly zero below this task-value
/// magnitude (distance maps are non-smooth at zero distance).
const DISTANCE_SINGULARITY: f64 = 1e-9;

/// Geodesic distances above `pi - ANTIPODE_BAND` clamp the distance-gradient
/// denominator to its value at the band edge.
const ANTIPODE_BAND: f64 = 1e-3;

/// Outer step for differencing Jacobians. Wider than the Jacobian step: the
/// inner Jacobian may itself be a finite difference carrying ~1e-10 noise,
/// which a 1e-6 outer step would amplify to 1e-4.
const JDOT_FD_STEP: f64 = 1e-4;

/// A smooth map between manifolds with Jacobian machinery. Analytic
/// Jacobians are expected from the built-in maps; the finite-difference
/// defaults serve user-defined maps and the test oracles.
pub trait TaskMap: Send + Sync {
    fn domain(&self) -> &ManifoldDescriptor;
    fn codomain(&self) -> &ManifoldDescriptor;

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint>;

    /// Jacobian in chart coordinates, `codomain_dim x domain_dim`.
    fn jacobian(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        fd_jacobian(self, p)
    }

    /// The velocity-contracted second derivative
    /// `(Jdot)_kj = v^l d^2 f^j / dx^l dx^k`, i.e. `d/dt Jf` along any curve
    /// through `p` with velocity `v`.
    fn jacobian_dot(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jacobian_dot(self, p, v)
    }
}

/// Central finite-difference Jacobian with per-component step scaling and a
/// one-sided fallback at chart-domain boundaries.
pub fn fd_jacobian<T: TaskMap + ?Sized>(map: &T, p: &ChartPoint) -> Result<DMatrix<f64>> {
    let y0 = map.eval(p)?;
    let (n, m) = (map.codomain().dim(), map.domain().dim());
    let mut j = DMatrix::zeros(n, m);
    for k in 0..m {
        let step = FD_STEP * p.coords[k].abs().max(1.0);
        let eval_at = |delta: f64| -> Result<DVector<f64>> {
            let mut coords = p.coords.clone();
            coords[k] += delta;
            let q = ChartPoint::new(map.domain(), p.chart, coords)?;
            let y = map.eval(&q)?;
            let y = if y.chart == y0.chart {
                y
            } else {
                chart_transition(map.codomain(), &y, y0.chart)?
            };
            Ok(y.coords)
        };
        let col = match (eval_at(step), eval_at(-step)) {
            (Ok(u), Ok(d)) => (u - d) / (2.0 * step),
            (Ok(u), Err(_)) => (u - &y0.coords) / step,
            (Err(_), Ok(d)) => (&y0.coords - d) / step,
            (Err(e), Err(_)) => return Err(e),
        };
        j.set_column(k, &col);
    }
    Ok(j)
}

/// `d/dt Jf` along the straight chart curve with velocity `v`, by central
/// differences of the map's Jacobian. Linear in `v` by construction.
pub fn fd_jacobian_dot<T: TaskMap + ?Sized>(
    map: &T,
    p: &ChartPoint,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let (n, m) = (map.codomain().dim(), map.domain().dim());
    let speed = v.norm();
    if speed == 0.0 {
        return Ok(DMatrix::zeros(n, m));
    }
    let dir = v / speed;
    let step = JDOT_FD_STEP * p.coords.amax().max(1.0);
    let jac_at = |delta: f64| -> Result<DMatrix<f64>> {
        let q = ChartPoint::new(map.domain(), p.chart, &p.coords + &dir * delta)?;
        map.jacobian(&q)
    };
    // fourth-order stencil: wide enough to swamp inner-FD noise, high enough
    // order that analytic Jacobians keep full accuracy
    let d = match (jac_at(step), jac_at(-step)) {
        (Ok(u), Ok(d)) => match (jac_at(2.0 * step), jac_at(-2.0 * step)) {
            (Ok(u2), Ok(d2)) => ((u - d) * 8.0 - (u2 - d2)) / (12.0 * step),
            _ => (u - d) / (2.0 * step),
        },
        (Ok(u), Err(_)) => (u - map.jacobian(p)?) / step,
        (Err(_), Ok(d)) => (map.jacobian(p)? - d) / step,
        (Err(e), Err(_)) => return Err(e),
    };
    Ok(d * speed)
}

/// The identity task map on a manifold.
pub struct IdentityMap {
    manifold: ManifoldDescriptor,
}

impl IdentityMap {
    pub fn new(manifold: ManifoldDescriptor) -> Self {
        IdentityMap { manifold }
    }
}

impl TaskMap for IdentityMap {
    fn domain(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    fn codomain(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint> {
        Ok(p.clone())
    }

    fn jacobian(&self, _p: &ChartPoint) -> Result<DMatrix<f64>> {
        let d = self.manifold.dim();
        Ok(DMatrix::identity(d, d))
    }

    fn jacobian_dot(&self, _p: &ChartPoint, _v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.manifold.dim();
        Ok(DMatrix::zeros(d, d))
    }
}

/// Geodesic distance to a fixed goal point. On spheres this is the arccosine
/// of the embedded inner product; on flat manifolds the Euclidean distance.
pub struct GeodesicDistanceMap {
    domain: ManifoldDescriptor,
    codomain: ManifoldDescriptor,
    goal: EmbeddedPoint,
}

impl GeodesicDistanceMap {
    pub fn new(domain: ManifoldDescriptor, goal: EmbeddedPoint) -> Result<Self> {
        if matches!(domain, ManifoldDescriptor::Product(_)) {
            return Err(Error::Unsupported(
                "geodesic distance on product manifolds is not provided".into(),
            ));
        }
        if goal.coords.len() != domain.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.embedding_dim(),
                got: goal.coords.len(),
            });
        }
        Ok(GeodesicDistanceMap {
            domain,
            codomain: ManifoldDescriptor::euclidean(1),
            goal,
        })
    }

    fn is_spherical(&self) -> bool {
        matches!(
            self.domain,
            ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2
        )
    }

    pub fn distance(&self, p: &ChartPoint) -> Result<f64> {
        let e = chart_to_embedding(&self.domain, p)?;
        if self.is_spherical() {
            let c = e.coords.dot(&self.goal.coords).clamp(-1.0, 1.0);
            Ok(c.acos())
        } else {
            Ok((e.coords - &self.goal.coords).norm())
        }
    }
}

impl TaskMap for GeodesicDistanceMap {
    fn domain(&self) -> &ManifoldDescriptor {
        &self.domain
    }

    fn codomain(&self) -> &ManifoldDescriptor {
        &self.codomain
    }

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint> {
        ChartPoint::new(&self.codomain, 0, DVector::from_element(1, self.distance(p)?))
    }

    fn jacobian(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        let m = self.domain.dim();
        let e = chart_to_embedding(&self.domain, p)?;
        let j_emb = crate::manifold::embedding_jacobian(&self.domain, p)?;
        if self.is_spherical() {
            let c = e.coords.dot(&self.goal.coords).clamp(-1.0, 1.0);
            let d = c.acos();
            if d < DISTANCE_SINGULARITY {
                return Ok(DMatrix::zeros(1, m));
            }
            // d(acos c) = -dc / sqrt(1 - c^2); near the antipode the
            // denominator is clamped at the band edge to avoid blowup.
            let sin_d = (1.0 - c * c).sqrt().max({
                if d > std::f64::consts::PI - ANTIPODE_BAND {
                    ANTIPODE_BAND.sin()
                } else {
                    f64::MIN_POSITIVE
                }
            });
            let row = -(self.goal.coords.transpose() * j_emb) / sin_d;
            Ok(DMatrix::from_iterator(1, m, row.iter().cloned()))
        } else {
            let diff = e.coords - &self.goal.coords;
            let d = diff.norm();
            if d < DISTANCE_SINGULARITY {
                return Ok(DMatrix::zeros(1, m));
            }
            let row = (diff.transpose() / d) * j_emb;
            Ok(DMatrix::from_iterator(1, m, row.iter().cloned()))
        }
    }

    fn jacobian_dot(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        // Analytic velocity-contracted second derivative. The finite
        // difference fallback is unusable here: near the goal the distance
        // gradient turns over the scale of the distance itself.
        let m = self.domain.dim();
        let e = chart_to_embedding(&self.domain, p)?;
        let j_emb = crate::manifold::embedding_jacobian(&self.domain, p)?;
        let hess = crate::manifold::embedding_hessian(&self.domain, p)?;
        let edot = &j_emb * v;
        // hv[(e_idx, j)] = v^k d2 e^{e_idx} / dx^j dx^k
        let d_emb = self.domain.embedding_dim();
        let mut hv = DMatrix::zeros(d_emb, m);
        for (e_idx, he) in hess.iter().enumerate() {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += he[(j, k)] * v[k];
                }
                hv[(e_idx, j)] = s;
            }
        }
        if self.is_spherical() {
            let c = e.coords.dot(&self.goal.coords).clamp(-1.0, 1.0);
            let d = c.acos();
            if d < DISTANCE_SINGULARITY {
                return Ok(DMatrix::zeros(1, m));
            }
            let sin_d = (1.0 - c * c).sqrt().max({
                if d > std::f64::consts::PI - ANTIPODE_BAND {
                    ANTIPODE_BAND.sin()
                } else {
                    f64::MIN_POSITIVE
                }
            });
            // J_j = -(g . de_j)/s; differentiate through both factors:
            // Jdot_j = -(g . (H_j v))/s - (g . de_j)(g . edot) c / s^3
            let g_de = self.goal.coords.transpose() * &j_emb; // 1 x m
            let g_hv = self.goal.coords.transpose() * &hv; // 1 x m
            let g_edot = self.goal.coords.dot(&edot);
            let mut out = DMatrix::zeros(1, m);
            for j in 0..m {
                out[(0, j)] =
                    -g_hv[(0, j)] / sin_d - g_de[(0, j)] * g_edot * c / (sin_d * sin_d * sin_d);
            }
            Ok(out)
        } else {
            let diff = e.coords - &self.goal.coords;
            let d = diff.norm();
            if d < DISTANCE_SINGULARITY {
                return Ok(DMatrix::zeros(1, m));
            }
            let u = diff / d;
            // Jdot_j = (edot . P de_j)/d + u . (H_j v),  P = I - u u^T
            let p_edot = &edot - &u * u.dot(&edot);
            let mut out = DMatrix::zeros(1, m);
            for j in 0..m {
                let de_j = j_emb.column(j);
                out[(0, j)] = p_edot.dot(&de_j) / d + u.dot(&hv.column(j).into_owned());
            }
            Ok(out)
        }
    }
}

/// Euclidean distance in the ambient embedding space to a fixed center,
/// minus an offset (the obstacle radius). Codomain is the positive reals, so
/// evaluation fails exactly when the constraint is violated.
pub struct AmbientDistanceMap {
    domain: ManifoldDescriptor,
    codomain: ManifoldDescriptor,
    pub center: DVector<f64>,
    pub radius: f64,
}

impl AmbientDistanceMap {
    pub fn new(domain: ManifoldDescriptor, center: DVector<f64>, radius: f64) -> Result<Self> {
        if center.len() != domain.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.embedding_dim(),
                got: center.len(),
            });
        }
        Ok(AmbientDistanceMap {
            domain,
            codomain: ManifoldDescriptor::PositiveReals,
            center,
            radius,
        })
    }

    pub fn distance(&self, p: &ChartPoint) -> Result<f64> {
        let e = chart_to_embedding(&self.domain, p)?;
        Ok((e.coords - &self.center).norm() - self.radius)
    }
}

impl TaskMap for AmbientDistanceMap {
    fn domain(&self) -> &ManifoldDescriptor {
        &self.domain
    }

    fn codomain(&self) -> &ManifoldDescriptor {
        &self.codomain
    }

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint> {
        ChartPoint::new(&self.codomain, 0, DVector::from_element(1, self.distance(p)?))
    }

    fn jacobian(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        let e = chart_to_embedding(&self.domain, p)?;
        let j_emb = crate::manifold::embedding_jacobian(&self.domain, p)?;
        let diff = e.coords - &self.center;
        let d = diff.norm();
        if d < DISTANCE_SINGULARITY {
            return Ok(DMatrix::zeros(1, self.domain.dim()));
        }
        let row = (diff.transpose() / d) * j_emb;
        Ok(DMatrix::from_iterator(1, self.domain.dim(), row.iter().cloned()))
    }

    fn jacobian_dot(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let m = self.domain.dim();
        let e = chart_to_embedding(&self.domain, p)?;
        let j_emb = crate::manifold::embedding_jacobian(&self.domain, p)?;
        let hess = crate::manifold::embedding_hessian(&self.domain, p)?;
        let diff = e.coords - &self.center;
        let d = diff.norm();
        if d < DISTANCE_SINGULARITY {
            return Ok(DMatrix::zeros(1, m));
        }
        let u = diff / d;
        let edot = &j_emb * v;
        let p_edot = &edot - &u * u.dot(&edot);
        let mut out = DMatrix::zeros(1, m);
        for j in 0..m {
            let de_j = j_emb.column(j).into_owned();
            let mut h_jv = 0.0;
            for (e_idx, he) in hess.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..m {
                    s += he[(j, k)] * v[k];
                }
                h_jv += u[e_idx] * s;
            }
            out[(0, j)] = p_edot.dot(&de_j) / d + h_jv;
        }
        Ok(out)
    }
}

/// Composition `outer o inner` with chain-rule Jacobians.
pub struct ComposedMap {
    inner: Arc<dyn TaskMap>,
    outer: Arc<dyn TaskMap>,
}

impl ComposedMap {
    pub fn new(inner: Arc<dyn TaskMap>, outer: Arc<dyn TaskMap>) -> Result<Self> {
        if inner.codomain() != outer.domain() {
            return Err(Error::Unsupported(
                "composed maps must agree on the intermediate manifold".into(),
            ));
        }
        Ok(ComposedMap { inner, outer })
    }
}

impl TaskMap for ComposedMap {
    fn domain(&self) -> &ManifoldDescriptor {
        self.inner.domain()
    }

    fn codomain(&self) -> &ManifoldDescriptor {
        self.outer.codomain()
    }

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint> {
        self.outer.eval(&self.inner.eval(p)?)
    }

    fn jacobian(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        let y = self.inner.eval(p)?;
        Ok(self.outer.jacobian(&y)? * self.inner.jacobian(p)?)
    }

    fn jacobian_dot(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        // d/dt (Jo Ji) = Jo_dot Ji + Jo Ji_dot with Jo_dot at (y, ydot)
        let y = self.inner.eval(p)?;
        let ji = self.inner.jacobian(p)?;
        let ydot = &ji * v;
        let jo = self.outer.jacobian(&y)?;
        Ok(self.outer.jacobian_dot(&y, &ydot)? * ji + jo * self.inner.jacobian_dot(p, v)?)
    }
}

/// The product `p -> (f(p), d(p))` of a task map and a scalar distance map,
/// used by distance-toggled tasks.
pub struct ProductWithDistanceMap {
    main: Arc<dyn TaskMap>,
    dist: Arc<dyn TaskMap>,
    codomain: ManifoldDescriptor,
}

impl ProductWithDistanceMap {
    pub fn new(main: Arc<dyn TaskMap>, dist: Arc<dyn TaskMap>) -> Result<Self> {
        if main.domain() != dist.domain() {
            return Err(Error::Unsupported(
                "toggled task and distance map must share the domain manifold".into(),
            ));
        }
        if dist.codomain().dim() != 1 {
            return Err(Error::Unsupported(
                "toggle distance map must have a 1-dimensional codomain".into(),
            ));
        }
        let codomain =
            ManifoldDescriptor::Product(vec![main.codomain().clone(), dist.codomain().clone()]);
        Ok(ProductWithDistanceMap {
            main,
            dist,
            codomain,
        })
    }
}

impl TaskMap for ProductWithDistanceMap {
    fn domain(&self) -> &ManifoldDescriptor {
        self.main.domain()
    }

    fn codomain(&self) -> &ManifoldDescriptor {
        &self.codomain
    }

    fn eval(&self, p: &ChartPoint) -> Result<ChartPoint> {
        let y = self.main.eval(p)?;
        let d = self.dist.eval(p)?;
        product_join(&self.codomain, &[y, d])
    }

    fn jacobian(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        let jm = self.main.jacobian(p)?;
        let jd = self.dist.jacobian(p)?;
        let mut j = DMatrix::zeros(jm.nrows() + 1, jm.ncols());
        j.rows_mut(0, jm.nrows()).copy_from(&jm);
        j.rows_mut(jm.nrows(), 1).copy_from(&jd);
        Ok(j)
    }

    fn jacobian_dot(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jm = self.main.jacobian_dot(p, v)?;
        let jd = self.dist.jacobian_dot(p, v)?;
        let mut j = DMatrix::zeros(jm.nrows() + 1, jm.ncols());
        j.rows_mut(0, jm.nrows()).copy_from(&jm);
        j.rows_mut(jm.nrows(), 1).copy_from(&jd);
        Ok(j)
    }
}

/// Barrier metric parameters: `g(x) = exp(a / (b x^b))` active within
/// distance `beta`.
#[derive(Debug, Clone, Copy)]
pub struct BarrierParams {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl BarrierParams {
    pub fn new(a: f64, b: f64, beta: f64) -> Result<Self> {
        if a <= 0.0 || b <= 1.0 || beta <= 0.0 {
            return Err(Error::Unsupported(format!(
                "barrier parameters require a > 0, b > 1, beta > 0 (got a={a}, b={b}, beta={beta})"
            )));
        }
        Ok(BarrierParams { a, b, beta })
    }
}

/// Constraint activation weight: 1 while approaching (`xdot < 0`) within the
/// activation radius, 0 otherwise. The optional smooth variant replaces the
/// step by a product of logistic factors.
pub struct ConstraintWeight {
    pub beta: f64,
    pub smooth_eps: Option<f64>,
}

impl WeightField for ConstraintWeight {
    fn matrix(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DMatrix<f64> {
        let x = y.coords[0];
        let xdot = ydot[0];
        let w = match self.smooth_eps {
            None => {
                if xdot < 0.0 && x < self.beta {
                    1.0
                } else {
                    0.0
                }
            }
            Some(eps) => {
                let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
                let radius = if self.beta.is_finite() {
                    logistic((self.beta - x) / eps)
                } else {
                    1.0
                };
                logistic(-xdot / eps) * radius
            }
        };
        DMatrix::from_element(1, 1, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    Attractor,
    Damping,
    Constraint,
    Toggled,
    Custom,
}

/// One task's bundle: map, behavior metric, potential, dissipative force,
/// and weighting pseudometric block. Immutable after construction.
#[derive(Clone)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub map: Arc<dyn TaskMap>,
    pub metric: Arc<dyn Metric>,
    pub potential: Arc<dyn Potential>,
    pub force: Arc<dyn DissipativeForce>,
    pub weight: Arc<dyn WeightField>,
}

impl TaskSpec {
    /// Image of a tangent state: `(f(p), Jf, Jf v)`.
    pub fn image(&self, s: &TangentState) -> Result<(ChartPoint, DMatrix<f64>, DVector<f64>)> {
        let y = self.map.eval(&s.point)?;
        let jf = self.map.jacobian(&s.point)?;
        let ydot = &jf * &s.velocity;
        Ok((y, jf, ydot))
    }
}

/// Goal-attraction task: distance-to-goal map, unit behavior metric,
/// quadratic potential, no dissipation, unit weight.
pub fn make_attractor_task(on: &ManifoldDescriptor, goal: EmbeddedPoint) -> Result<TaskSpec> {
    let goal = EmbeddedPoint::new(on, goal.coords)?;
    let map = GeodesicDistanceMap::new(on.clone(), goal)?;
    let r1 = ManifoldDescriptor::euclidean(1);
    Ok(TaskSpec {
        name: "attractor".into(),
        kind: TaskKind::Attractor,
        map: Arc::new(map),
        metric: Arc::new(ConstantMetric::identity(r1)),
        potential: Arc::new(SquaredNormPotential),
        force: Arc::new(ZeroForce { dim: 1 }),
        weight: Arc::new(ConstantWeight(DMatrix::identity(1, 1))),
    })
}

/// Damping task: identity map with ambient components (identity metric and
/// weight, viscous force `-c xdot`) pulled back through the embedding.
/// Strictly dissipative for `c > 0`.
pub fn make_damping_task(on: &ManifoldDescriptor, c: f64) -> Result<TaskSpec> {
    if c <= 0.0 {
        return Err(Error::Unsupported(format!(
            "damping coefficient must be > 0, got {c}"
        )));
    }
    let comps = pullback_through_embedding(on, AmbientComponents::damping(on.embedding_dim(), c));
    Ok(TaskSpec {
        name: "damping".into(),
        kind: TaskKind::Damping,
        map: Arc::new(IdentityMap::new(on.clone())),
        metric: Arc::new(comps.metric),
        potential: Arc::new(comps.potential),
        force: Arc::new(comps.force),
        weight: Arc::new(comps.weight),
    })
}

/// Metric-barrier constraint task over a positive distance map: barrier
/// behavior metric, zero potential and force, approach-toggled weight.
pub fn make_constraint_task(
    name: &str,
    distance: Arc<dyn TaskMap>,
    params: BarrierParams,
    smooth_eps: Option<f64>,
) -> Result<TaskSpec> {
    if *distance.codomain() != ManifoldDescriptor::PositiveReals {
        return Err(Error::Unsupported(
            "constraint distance maps must target the positive reals".into(),
        ));
    }
    Ok(TaskSpec {
        name: name.into(),
        kind: TaskKind::Constraint,
        map: distance,
        metric: Arc::new(BarrierMetric::new(params.a, params.b)),
        potential: Arc::new(ZeroPotential { dim: 1 }),
        force: Arc::new(ZeroForce { dim: 1 }),
        weight: Arc::new(ConstraintWeight {
            beta: params.beta,
            smooth_eps,
        }),
    })
}

type TogglePredicate = dyn Fn(f64, f64) -> bool + Send + Sync;

/// Extends a task's codomain by the toggle distance: components are extended
/// on the new factor (unit metric block, zero potential/force, zero weight)
/// and the original weight is gated by the predicate on `(d, ddot)`.
pub fn toggle_by_distance(
    task: &TaskSpec,
    distance: Arc<dyn TaskMap>,
    predicate: Arc<TogglePredicate>,
) -> Result<TaskSpec> {
    let map = ProductWithDistanceMap::new(task.map.clone(), distance)?;
    let codomain = map.codomain().clone();
    Ok(TaskSpec {
        name: format!("{}-toggled", task.name),
        kind: TaskKind::Toggled,
        map: Arc::new(map),
        metric: Arc::new(ExtendedMetric {
            codomain: codomain.clone(),
            inner: task.metric.clone(),
        }),
        potential: Arc::new(ExtendedPotential {
            codomain: codomain.clone(),
            inner: task.potential.clone(),
        }),
        force: Arc::new(ExtendedForce {
            codomain: codomain.clone(),
            inner: task.force.clone(),
        }),
        weight: Arc::new(ToggledWeight {
            codomain,
            inner: task.weight.clone(),
            predicate,
        }),
    })
}

fn split_product_state(
    codomain: &ManifoldDescriptor,
    y: &ChartPoint,
    ydot: &DVector<f64>,
) -> (ChartPoint, DVector<f64>, f64, f64) {
    let parts = product_split(codomain, y).expect("valid product point");
    let vels = product_split_velocity(codomain, ydot).expect("matching velocity");
    let d = parts[1].coords[0];
    let ddot = vels[1][0];
    (parts[0].clone(), vels[0].clone(), d, ddot)
}

/// Block metric `blockdiag(inner, 1)`: the toggle factor carries a unit
/// metric so the extended metric stays positive-definite (its weight is
/// always zero, so the factor never contributes to the policy).
struct ExtendedMetric {
    codomain: ManifoldDescriptor,
    inner: Arc<dyn Metric>,
}

impl Metric for ExtendedMetric {
    fn manifold(&self) -> &ManifoldDescriptor {
        &self.codomain
    }

    fn matrix(&self, p: &ChartPoint) -> DMatrix<f64> {
        let parts = product_split(&self.codomain, p).expect("valid product point");
        let inner = self.inner.matrix(&parts[0]);
        let n = inner.nrows() + 1;
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (n - 1, n - 1)).copy_from(&inner);
        out[(n - 1, n - 1)] = 1.0;
        out
    }

    fn christoffel_closed_form(&self, p: &ChartPoint) -> Option<Tensor3> {
        let parts = product_split(&self.codomain, p).ok()?;
        let inner = crate::riemannian::christoffel(self.inner.as_ref(), &parts[0]).ok()?;
        let (n0, _, _) = inner.dims();
        let n = n0 + 1;
        let mut out = Tensor3::zeros(n, n, n);
        for k in 0..n0 {
            for i in 0..n0 {
                for j in 0..n0 {
                    out.set(k, i, j, inner.get(k, i, j));
                }
            }
        }
        Some(out)
    }
}

struct ExtendedPotential {
    codomain: ManifoldDescriptor,
    inner: Arc<dyn Potential>,
}

impl Potential for ExtendedPotential {
    fn value(&self, y: &ChartPoint) -> f64 {
        let parts = product_split(&self.codomain, y).expect("valid product point");
        self.inner.value(&parts[0])
    }

    fn gradient(&self, y: &ChartPoint) -> DVector<f64> {
        let parts = product_split(&self.codomain, y).expect("valid product point");
        let g = self.inner.gradient(&parts[0]);
        let mut out = DVector::zeros(g.len() + 1);
        out.rows_mut(0, g.len()).copy_from(&g);
        out
    }
}

struct ExtendedForce {
    codomain: ManifoldDescriptor,
    inner: Arc<dyn DissipativeForce>,
}

impl DissipativeForce for ExtendedForce {
    fn force(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DVector<f64> {
        let (y0, v0, _, _) = split_product_state(&self.codomain, y, ydot);
        let f = self.inner.force(&y0, &v0);
        let mut out = DVector::zeros(f.len() + 1);
        out.rows_mut(0, f.len()).copy_from(&f);
        out
    }
}

struct ToggledWeight {
    codomain: ManifoldDescriptor,
    inner: Arc<dyn WeightField>,
    predicate: Arc<TogglePredicate>,
}

impl WeightField for ToggledWeight {
    fn matrix(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DMatrix<f64> {
        let (y0, v0, d, ddot) = split_product_state(&self.codomain, y, ydot);
        let n = y.dim();
        let mut out = DMatrix::zeros(n, n);
        if (self.predicate)(d, ddot) {
            let w = self.inner.matrix(&y0, &v0);
            out.view_mut((0, 0), (n - 1, n - 1)).copy_from(&w);
        }
        out
    }
}

/// Per-state verdicts for the design assumptions: weights positive-definite
/// or zero (A1), stacked active Jacobians of full rank (A2), strict combined
/// dissipation (A3).
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub per_state: Vec<StateAssumptions>,
}

#[derive(Debug, Clone)]
pub struct StateAssumptions {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub detail: Option<String>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.per_state.iter().all(|s| s.a1 && s.a2 && s.a3)
    }

    pub fn a2_all(&self) -> bool {
        self.per_state.iter().all(|s| s.a2)
    }
}

const WEIGHT_PD_TOL: f64 = 1e-10;
const RANK_REL_TOL: f64 = 1e-8;

/// Validates A1-A3 for a task set at the sampled states. A3 is checked at
/// each state's own velocity plus a handful of random directions.
pub fn check_assumptions(
    tasks: &[TaskSpec],
    states: &[TangentState],
    extra_velocities: &[DVector<f64>],
) -> Result<AssumptionReport> {
    let mut per_state = Vec::with_capacity(states.len());
    for s in states {
        let m = s.point.dim();
        let mut a1 = true;
        let mut a2 = true;
        let mut a3 = true;
        let mut detail = None;

        let mut active_rows = Vec::new();
        for task in tasks {
            let (y, jf, ydot) = task.image(s)?;
            let w = task.weight.matrix(&y, &ydot);
            let zero = w.amax() <= 1e-12;
            if !zero {
                let eigs = w.clone().symmetric_eigenvalues();
                if eigs.min() <= WEIGHT_PD_TOL {
                    a1 = false;
                    detail.get_or_insert(format!(
                        "A1: weight of `{}` is neither PD nor zero (min eig {:.3e})",
                        task.name,
                        eigs.min()
                    ));
                }
                active_rows.push(jf);
            }
        }

        // A2: the stacked Jacobian of nonzero-weight tasks must have rank m.
        let total_rows: usize = active_rows.iter().map(|j| j.nrows()).sum();
        if total_rows == 0 {
            a2 = false;
            detail.get_or_insert("A2: no task has nonzero weight".into());
        } else {
            let mut stacked = DMatrix::zeros(total_rows, m);
            let mut row = 0;
            for j in &active_rows {
                stacked.rows_mut(row, j.nrows()).copy_from(j);
                row += j.nrows();
            }
            let sv = stacked.singular_values();
            let rank = sv.iter().filter(|&&s| s > RANK_REL_TOL * sv.max()).count();
            if sv.max() == 0.0 || rank < m {
                a2 = false;
                detail.get_or_insert(format!("A2: stacked Jacobian rank {rank} < {m}"));
            }
        }

        // A3: strict dissipation of the combined forces along sampled
        // nonzero velocities.
        let mut velocities: Vec<DVector<f64>> = Vec::new();
        if s.velocity.norm() > 0.0 {
            velocities.push(s.velocity.clone());
        }
        velocities.extend(extra_velocities.iter().cloned());
        for v in &velocities {
            if v.norm() == 0.0 {
                continue;
            }
            let probe = TangentState::new(s.point.clone(), v.clone())?;
            let mut power = 0.0;
            let mut any_active = false;
            for task in tasks {
                let (y, _, ydot) = task.image(&probe)?;
                let w = task.weight.matrix(&y, &ydot);
                if w.amax() <= 1e-12 {
                    continue;
                }
                any_active = true;
                power += task.force.force(&y, &ydot).dot(&ydot);
            }
            if !any_active || power >= 0.0 {
                a3 = false;
                detail.get_or_insert(format!(
                    "A3: combined dissipation power {power:.3e} is not strictly negative"
                ));
                break;
            }
        }

        per_state.push(StateAssumptions { a1, a2, a3, detail });
    }
    Ok(AssumptionReport { per_state })
}
