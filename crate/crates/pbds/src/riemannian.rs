//! Riemannian metrics, Levi-Civita Christoffel symbols, sharp/gradient
//! operators, and the pullback of ambient-space components through chart
//! embeddings.

use crate::error::{Error, Result};
use crate::manifold::{embedding_hessian, embedding_jacobian, ChartPoint, ManifoldDescriptor};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Central finite-difference step for metric and Jacobian derivatives. The
/// effective step is scaled per component by `max(1, |x_i|)` so derivatives
/// stay accurate at large stereographic coordinates.
pub const FD_STEP: f64 = 1e-6;

/// Condition-number threshold beyond which a metric is treated as singular.
pub const METRIC_CONDITION_LIMIT: f64 = 1e12;

/// Dense rank-3 array, used for Christoffel symbols `t[(k, i, j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            dims: (d0, d1, d2),
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        debug_assert!(k < self.dims.0 && i < self.dims.1 && j < self.dims.2);
        (k * self.dims.1 + i) * self.dims.2 + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let id = self.idx(k, i, j);
        self.data[id] = v;
    }

    #[inline]
    pub fn add(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let id = self.idx(k, i, j);
        self.data[id] += v;
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, f64> {
        self.data.iter_mut()
    }
}

/// A chart-aware Riemannian metric field: a symmetric positive-definite
/// coordinate matrix at every point, with optional analytic derivatives.
pub trait Metric: Send + Sync {
    fn manifold(&self) -> &ManifoldDescriptor;

    /// Coordinate matrix `g(p)` in the chart of `p`.
    fn matrix(&self, p: &ChartPoint) -> DMatrix<f64>;

    /// Analytic `dg/dx^h` for each coordinate `h`, if available. Finite
    /// differences are the fallback.
    fn partials(&self, p: &ChartPoint) -> Option<Vec<DMatrix<f64>>> {
        let _ = p;
        None
    }

    /// Closed-form Christoffel symbols, when the metric carries them.
    fn christoffel_closed_form(&self, p: &ChartPoint) -> Option<Tensor3> {
        let _ = p;
        None
    }
}

/// Levi-Civita Christoffel symbols of `g` at `p`.
pub fn christoffel(g: &dyn Metric, p: &ChartPoint) -> Result<Tensor3> {
    if let Some(t) = g.christoffel_closed_form(p) {
        return Ok(t);
    }
    let mat = g.matrix(p);
    let parts = match g.partials(p) {
        Some(parts) => parts,
        None => finite_difference_metric_derivative(g, p, FD_STEP)?,
    };
    levi_civita(&mat, &parts)
}

/// Levi-Civita formula from a metric matrix and its coordinate derivatives:
/// `Gamma^k_ij = 1/2 g^kh (d_i g_jh + d_j g_ih - d_h g_ij)`.
pub fn levi_civita(g: &DMatrix<f64>, partials: &[DMatrix<f64>]) -> Result<Tensor3> {
    let n = g.nrows();
    let g_inv = invert_metric(g)?;
    let mut gamma = Tensor3::zeros(n, n, n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..=i {
                let mut sum = 0.0;
                for h in 0..n {
                    sum += g_inv[(k, h)]
                        * (partials[i][(j, h)] + partials[j][(i, h)] - partials[h][(i, j)]);
                }
                let v = 0.5 * sum;
                gamma.set(k, i, j, v);
                gamma.set(k, j, i, v);
            }
        }
    }
    Ok(gamma)
}

/// Inverts a metric matrix, rejecting condition numbers beyond
/// [`METRIC_CONDITION_LIMIT`].
pub fn invert_metric(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cond = condition_number(g);
    if !cond.is_finite() || cond > METRIC_CONDITION_LIMIT {
        return Err(Error::SingularMetric { cond });
    }
    g.clone()
        .try_inverse()
        .ok_or(Error::SingularMetric { cond })
}

/// Ratio of extreme singular values (`inf` for a singular matrix).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        return f64::INFINITY;
    }
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Raises a Euclidean gradient through the metric: returns `g(p)^-1 grad`.
pub fn sharp_gradient(g: &dyn Metric, p: &ChartPoint, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let g_inv = invert_metric(&g.matrix(p))?;
    Ok(g_inv * grad)
}

/// Central finite differences of the metric matrix, per coordinate. Points
/// whose perturbation leaves the chart domain (the positive-reals boundary)
/// fall back to one-sided differences.
pub fn finite_difference_metric_derivative(
    g: &dyn Metric,
    p: &ChartPoint,
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let m = g.manifold();
    let n = p.dim();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let step = h * p.coords[k].abs().max(1.0);
        let eval = |delta: f64| -> Result<DMatrix<f64>> {
            let mut coords = p.coords.clone();
            coords[k] += delta;
            let q = ChartPoint::new(m, p.chart, coords)?;
            Ok(g.matrix(&q))
        };
        let up = eval(step);
        let dn = eval(-step);
        let d = match (up, dn) {
            (Ok(u), Ok(d)) => (u - d) / (2.0 * step),
            (Ok(u), Err(_)) => (u - g.matrix(p)) / step,
            (Err(_), Ok(d)) => (g.matrix(p) - d) / step,
            (Err(e), Err(_)) => return Err(e),
        };
        out.push(d);
    }
    Ok(out)
}

/// A constant (position-independent) metric; Christoffel symbols vanish.
#[derive(Debug, Clone)]
pub struct ConstantMetric {
    manifold: ManifoldDescriptor,
    matrix: DMatrix<f64>,
}

impl ConstantMetric {
    pub fn new(manifold: ManifoldDescriptor, matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), manifold.dim());
        assert_eq!(matrix.ncols(), manifold.dim());
        ConstantMetric { manifold, matrix }
    }

    pub fn identity(manifold: ManifoldDescriptor) -> Self {
        let d = manifold.dim();
        ConstantMetric::new(manifold, DMatrix::identity(d, d))
    }
}

impl Metric for ConstantMetric {
    fn manifold(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    fn matrix(&self, _p: &ChartPoint) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn partials(&self, _p: &ChartPoint) -> Option<Vec<DMatrix<f64>>> {
        let d = self.matrix.nrows();
        Some(vec![DMatrix::zeros(d, d); d])
    }

    fn christoffel_closed_form(&self, _p: &ChartPoint) -> Option<Tensor3> {
        let d = self.matrix.nrows();
        Some(Tensor3::zeros(d, d, d))
    }
}

/// The barrier metric `g(x) = exp(a / (b x^b))` on the positive reals.
///
/// Evaluated in log space internally; `exp(1/(2x^2))` overflows an f64 well
/// before the constraint boundary, so the matrix saturates and the
/// Christoffel symbols use the exact closed form `1/2 d_x log g`.
#[derive(Debug, Clone)]
pub struct BarrierMetric {
    manifold: ManifoldDescriptor,
    pub a: f64,
    pub b: f64,
}

impl BarrierMetric {
    pub fn new(a: f64, b: f64) -> Self {
        assert!(a > 0.0 && b > 1.0, "barrier metric requires a > 0, b > 1");
        BarrierMetric {
            manifold: ManifoldDescriptor::PositiveReals,
            a,
            b,
        }
    }

    pub fn log_value(&self, x: f64) -> f64 {
        self.a / (self.b * x.powf(self.b))
    }

    fn dlog_value(&self, x: f64) -> f64 {
        -self.a * x.powf(-self.b - 1.0)
    }

    fn saturated_exp(v: f64) -> f64 {
        if v > 709.0 {
            f64::MAX
        } else {
            v.exp()
        }
    }
}

impl Metric for BarrierMetric {
    fn manifold(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    fn matrix(&self, p: &ChartPoint) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, Self::saturated_exp(self.log_value(p.coords[0])))
    }

    fn partials(&self, p: &ChartPoint) -> Option<Vec<DMatrix<f64>>> {
        let x = p.coords[0];
        let g = Self::saturated_exp(self.log_value(x));
        Some(vec![DMatrix::from_element(1, 1, g * self.dlog_value(x))])
    }

    fn christoffel_closed_form(&self, p: &ChartPoint) -> Option<Tensor3> {
        let mut t = Tensor3::zeros(1, 1, 1);
        t.set(0, 0, 0, 0.5 * self.dlog_value(p.coords[0]));
        Some(t)
    }
}

/// Metric induced on chart coordinates by a constant ambient metric through
/// the chart embedding: `g = J^T gbar J` with `J` the embedding Jacobian.
#[derive(Debug, Clone)]
pub struct PullbackMetric {
    manifold: ManifoldDescriptor,
    ambient: DMatrix<f64>,
}

impl PullbackMetric {
    pub fn new(manifold: ManifoldDescriptor, ambient: DMatrix<f64>) -> Self {
        assert_eq!(ambient.nrows(), manifold.embedding_dim());
        PullbackMetric { manifold, ambient }
    }

    pub fn ambient_identity(manifold: ManifoldDescriptor) -> Self {
        let d = manifold.embedding_dim();
        PullbackMetric::new(manifold, DMatrix::identity(d, d))
    }
}

impl Metric for PullbackMetric {
    fn manifold(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    fn matrix(&self, p: &ChartPoint) -> DMatrix<f64> {
        let j = embedding_jacobian(&self.manifold, p).expect("valid chart point");
        j.transpose() * &self.ambient * j
    }

    fn partials(&self, p: &ChartPoint) -> Option<Vec<DMatrix<f64>>> {
        let j = embedding_jacobian(&self.manifold, p).ok()?;
        let hess = embedding_hessian(&self.manifold, p).ok()?;
        let d = self.manifold.dim();
        let d_emb = self.manifold.embedding_dim();
        let gj = &self.ambient * &j;
        let mut out = Vec::with_capacity(d);
        for h in 0..d {
            // dJ/dx^h, one column per chart coordinate
            let mut dj = DMatrix::zeros(d_emb, d);
            for e in 0..d_emb {
                for k in 0..d {
                    dj[(e, k)] = hess[e][(k, h)];
                }
            }
            let term = dj.transpose() * &gj;
            out.push(&term + term.transpose());
        }
        Some(out)
    }
}

/// A smooth non-negative potential with its Euclidean coordinate gradient.
pub trait Potential: Send + Sync {
    fn value(&self, y: &ChartPoint) -> f64;
    fn gradient(&self, y: &ChartPoint) -> DVector<f64>;
}

/// A velocity-dependent force with non-positive power along the velocity.
pub trait DissipativeForce: Send + Sync {
    fn force(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DVector<f64>;
}

/// The operative block of a weighting pseudometric: positive-semidefinite,
/// possibly zero, evaluated on the codomain tangent bundle.
pub trait WeightField: Send + Sync {
    fn matrix(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DMatrix<f64>;
}

pub struct ZeroPotential {
    pub dim: usize,
}

impl Potential for ZeroPotential {
    fn value(&self, _y: &ChartPoint) -> f64 {
        0.0
    }

    fn gradient(&self, _y: &ChartPoint) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// `Phi(y) = |y|^2` with gradient `2 y`.
pub struct SquaredNormPotential;

impl Potential for SquaredNormPotential {
    fn value(&self, y: &ChartPoint) -> f64 {
        y.coords.norm_squared()
    }

    fn gradient(&self, y: &ChartPoint) -> DVector<f64> {
        2.0 * &y.coords
    }
}

pub struct ZeroForce {
    pub dim: usize,
}

impl DissipativeForce for ZeroForce {
    fn force(&self, _y: &ChartPoint, _ydot: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

pub struct ConstantWeight(pub DMatrix<f64>);

impl WeightField for ConstantWeight {
    fn matrix(&self, _y: &ChartPoint, _ydot: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

type AmbientForceFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type AmbientScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type AmbientGradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Task components designed in the ambient Euclidean space of an embedding.
#[derive(Clone)]
pub struct AmbientComponents {
    pub metric: DMatrix<f64>,
    pub weight: DMatrix<f64>,
    pub force: Arc<AmbientForceFn>,
    pub potential: Arc<AmbientScalarFn>,
    pub potential_gradient: Arc<AmbientGradFn>,
}

impl AmbientComponents {
    /// Identity ambient metric/weight, zero potential, viscous damping force
    /// `-c xdot`.
    pub fn damping(embedding_dim: usize, c: f64) -> Self {
        AmbientComponents {
            metric: DMatrix::identity(embedding_dim, embedding_dim),
            weight: DMatrix::identity(embedding_dim, embedding_dim),
            force: Arc::new(move |_x, xdot| -c * xdot),
            potential: Arc::new(|_x| 0.0),
            potential_gradient: Arc::new(move |x| DVector::zeros(x.len())),
        }
    }
}

/// Chart-level components obtained by pulling ambient components through the
/// chart embedding maps:
/// `g = J^T gbar J`, `F_D = J^T Fbar_D`, `Phi = Phibar o phibar`,
/// `w^a = J^T wbar^a J`.
pub struct PulledBackComponents {
    pub metric: PullbackMetric,
    pub force: PullbackForce,
    pub potential: PullbackPotential,
    pub weight: PullbackWeight,
}

pub fn pullback_through_embedding(
    m: &ManifoldDescriptor,
    amb: AmbientComponents,
) -> PulledBackComponents {
    PulledBackComponents {
        metric: PullbackMetric::new(m.clone(), amb.metric.clone()),
        force: PullbackForce {
            manifold: m.clone(),
            force: amb.force,
        },
        potential: PullbackPotential {
            manifold: m.clone(),
            value: amb.potential,
            gradient: amb.potential_gradient,
        },
        weight: PullbackWeight(PullbackMetric::new(m.clone(), amb.weight)),
    }
}

pub struct PullbackForce {
    manifold: ManifoldDescriptor,
    force: Arc<AmbientForceFn>,
}

impl DissipativeForce for PullbackForce {
    fn force(&self, y: &ChartPoint, ydot: &DVector<f64>) -> DVector<f64> {
        let j = embedding_jacobian(&self.manifold, y).expect("valid chart point");
        let x = crate::manifold::chart_to_embedding(&self.manifold, y)
            .expect("valid chart point")
            .coords;
        let xdot = &j * ydot;
        j.transpose() * (self.force)(&x, &xdot)
    }
}

pub struct PullbackPotential {
    manifold: ManifoldDescriptor,
    value: Arc<AmbientScalarFn>,
    gradient: Arc<AmbientGradFn>,
}

impl Potential for PullbackPotential {
    fn value(&self, y: &ChartPoint) -> f64 {
        let x = crate::manifold::chart_to_embedding(&self.manifold, y)
            .expect("valid chart point")
            .coords;
        (self.value)(&x)
    }

    fn gradient(&self, y: &ChartPoint) -> DVector<f64> {
        let j = embedding_jacobian(&self.manifold, y).expect("valid chart point");
        let x = crate::manifold::chart_to_embedding(&self.manifold, y)
            .expect("valid chart point")
            .coords;
        j.transpose() * (self.gradient)(&x)
    }
}

pub struct PullbackWeight(pub PullbackMetric);

impl WeightField for PullbackWeight {
    fn matrix(&self, y: &ChartPoint, _ydot: &DVector<f64>) -> DMatrix<f64> {
        self.0.matrix(y)
    }
}
