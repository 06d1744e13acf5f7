//! Manifolds as collections of coordinate charts with transition maps and a
//! canonical Euclidean embedding.
//!
//! Spheres use the two stereographic charts: chart 0 is the south-pole chart
//! (excludes the south pole, maps the chart origin to the north pole) and
//! chart 1 is the north-pole chart. The transition map between the two is
//! `x -> x / |x|^2` in either direction. Euclidean space and the positive
//! reals carry a single identity chart, and product manifolds combine factor
//! charts with a mixed-radix chart id.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const SOUTH_CHART: usize = 0;
pub const NORTH_CHART: usize = 1;

/// Tolerance for accepting (and silently re-normalizing) near-unit embedded
/// sphere points; beyond this the point is rejected as off-manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldDescriptor {
    /// Flat n-dimensional space, identity chart and embedding.
    Euclidean { dim: usize },
    /// Strictly positive reals, identity chart and embedding.
    PositiveReals,
    /// The circle as the 1-sphere with two stereographic charts.
    Circle,
    /// The 2-sphere with two stereographic charts, embedded as the unit
    /// sphere in R^3.
    Sphere2,
    Product(Vec<ManifoldDescriptor>),
}

impl ManifoldDescriptor {
    pub fn euclidean(dim: usize) -> Self {
        ManifoldDescriptor::Euclidean { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            ManifoldDescriptor::Euclidean { dim } => *dim,
            ManifoldDescriptor::PositiveReals => 1,
            ManifoldDescriptor::Circle => 1,
            ManifoldDescriptor::Sphere2 => 2,
            ManifoldDescriptor::Product(fs) => fs.iter().map(|f| f.dim()).sum(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            ManifoldDescriptor::Euclidean { dim } => *dim,
            ManifoldDescriptor::PositiveReals => 1,
            ManifoldDescriptor::Circle => 2,
            ManifoldDescriptor::Sphere2 => 3,
            ManifoldDescriptor::Product(fs) => fs.iter().map(|f| f.embedding_dim()).sum(),
        }
    }

    pub fn chart_count(&self) -> usize {
        match self {
            ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => 1,
            ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => 2,
            ManifoldDescriptor::Product(fs) => fs.iter().map(|f| f.chart_count()).product(),
        }
    }

    /// Sphere dimension when the manifold is a stereographic sphere.
    fn sphere_n(&self) -> Option<usize> {
        match self {
            ManifoldDescriptor::Circle => Some(1),
            ManifoldDescriptor::Sphere2 => Some(2),
            _ => None,
        }
    }

    pub fn factors(&self) -> std::slice::Iter<'_, ManifoldDescriptor> {
        match self {
            ManifoldDescriptor::Product(fs) => fs.iter(),
            _ => std::slice::from_ref(self).iter(),
        }
    }
}

/// A manifold point as chart id plus chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub chart: usize,
    pub coords: DVector<f64>,
}

impl ChartPoint {
    pub fn new(m: &ManifoldDescriptor, chart: usize, coords: DVector<f64>) -> Result<Self> {
        if chart >= m.chart_count() {
            return Err(Error::InvalidChart {
                chart,
                count: m.chart_count(),
            });
        }
        if coords.len() != m.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                got: coords.len(),
            });
        }
        let p = ChartPoint { chart, coords };
        validate_coords(m, &p)?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

fn validate_coords(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<()> {
    match m {
        ManifoldDescriptor::PositiveReals => {
            if p.coords[0] <= 0.0 {
                return Err(Error::NonPositiveCoordinate(p.coords[0]));
            }
        }
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            if !p.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite("stereographic chart coordinates".into()));
            }
        }
        ManifoldDescriptor::Product(fs) => {
            let charts = decode_product_chart(m, p.chart)?;
            let mut off = 0;
            for (f, chart) in fs.iter().zip(charts) {
                let d = f.dim();
                let sub = ChartPoint {
                    chart,
                    coords: p.coords.rows(off, d).into_owned(),
                };
                validate_coords(f, &sub)?;
                off += d;
            }
        }
        _ => {}
    }
    Ok(())
}

/// A point together with a velocity expressed in the same chart.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    pub point: ChartPoint,
    pub velocity: DVector<f64>,
}

impl TangentState {
    pub fn new(point: ChartPoint, velocity: DVector<f64>) -> Result<Self> {
        if velocity.len() != point.dim() {
            return Err(Error::DimensionMismatch {
                expected: point.dim(),
                got: velocity.len(),
            });
        }
        Ok(TangentState { point, velocity })
    }
}

/// Ambient-space coordinates of a manifold point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPoint {
    pub coords: DVector<f64>,
}

impl EmbeddedPoint {
    /// Validates against the manifold's embedded model; sphere points within
    /// `ON_MANIFOLD_TOL` of unit norm are re-normalized.
    pub fn new(m: &ManifoldDescriptor, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != m.embedding_dim() {
            return Err(Error::DimensionMismatch {
                expected: m.embedding_dim(),
                got: coords.len(),
            });
        }
        let coords = normalize_embedded(m, coords)?;
        Ok(EmbeddedPoint { coords })
    }
}

fn normalize_embedded(m: &ManifoldDescriptor, coords: DVector<f64>) -> Result<DVector<f64>> {
    match m {
        ManifoldDescriptor::Euclidean { .. } => Ok(coords),
        ManifoldDescriptor::PositiveReals => {
            if coords[0] <= 0.0 {
                return Err(Error::NonPositiveCoordinate(coords[0]));
            }
            Ok(coords)
        }
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let norm = coords.norm();
            if (norm - 1.0).abs() > ON_MANIFOLD_TOL {
                return Err(Error::OffManifold(format!(
                    "sphere point has norm {norm}, beyond tolerance {ON_MANIFOLD_TOL}"
                )));
            }
            Ok(coords / norm)
        }
        ManifoldDescriptor::Product(fs) => {
            let mut out = coords;
            let mut off = 0;
            for f in fs {
                let d = f.embedding_dim();
                let part = normalize_embedded(f, out.rows(off, d).into_owned())?;
                out.rows_mut(off, d).copy_from(&part);
                off += d;
            }
            Ok(out)
        }
    }
}

/// Scheme for choosing a chart from an embedded point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartScheme {
    Fixed(usize),
    /// South chart when the last embedded coordinate is >= 0 (ties included),
    /// north chart otherwise. Applied factorwise on products.
    Hemisphere,
}

// Mixed-radix chart ids for products: the first factor is the least
// significant digit.

pub fn encode_product_chart(m: &ManifoldDescriptor, charts: &[usize]) -> Result<usize> {
    let factors: Vec<_> = m.factors().collect();
    if factors.len() != charts.len() {
        return Err(Error::DimensionMismatch {
            expected: factors.len(),
            got: charts.len(),
        });
    }
    let mut id = 0;
    let mut radix = 1;
    for (f, &c) in factors.iter().zip(charts) {
        if c >= f.chart_count() {
            return Err(Error::InvalidChart {
                chart: c,
                count: f.chart_count(),
            });
        }
        id += c * radix;
        radix *= f.chart_count();
    }
    Ok(id)
}

pub fn decode_product_chart(m: &ManifoldDescriptor, chart: usize) -> Result<Vec<usize>> {
    if chart >= m.chart_count() {
        return Err(Error::InvalidChart {
            chart,
            count: m.chart_count(),
        });
    }
    let mut rem = chart;
    let mut out = Vec::new();
    for f in m.factors() {
        let c = f.chart_count();
        out.push(rem % c);
        rem /= c;
    }
    Ok(out)
}

/// Concatenates factor points into a product point.
pub fn product_join(m: &ManifoldDescriptor, parts: &[ChartPoint]) -> Result<ChartPoint> {
    let charts: Vec<usize> = parts.iter().map(|p| p.chart).collect();
    let chart = encode_product_chart(m, &charts)?;
    let mut coords = DVector::zeros(m.dim());
    let mut off = 0;
    for (f, p) in m.factors().zip(parts) {
        if p.dim() != f.dim() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                got: p.dim(),
            });
        }
        coords.rows_mut(off, f.dim()).copy_from(&p.coords);
        off += f.dim();
    }
    ChartPoint::new(m, chart, coords)
}

/// Splits a product point into its factor points.
pub fn product_split(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<Vec<ChartPoint>> {
    if p.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: p.dim(),
        });
    }
    let charts = decode_product_chart(m, p.chart)?;
    let mut out = Vec::new();
    let mut off = 0;
    for (f, chart) in m.factors().zip(charts) {
        out.push(ChartPoint {
            chart,
            coords: p.coords.rows(off, f.dim()).into_owned(),
        });
        off += f.dim();
    }
    Ok(out)
}

/// Splits a velocity vector along the factor dimensions.
pub fn product_split_velocity(m: &ManifoldDescriptor, v: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if v.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: v.len(),
        });
    }
    let mut out = Vec::new();
    let mut off = 0;
    for f in m.factors() {
        out.push(v.rows(off, f.dim()).into_owned());
        off += f.dim();
    }
    Ok(out)
}

fn sphere_embed(n: usize, chart: usize, x: &DVector<f64>) -> DVector<f64> {
    let a = 1.0 + x.norm_squared();
    let mut e = DVector::zeros(n + 1);
    for i in 0..n {
        e[i] = 2.0 * x[i] / a;
    }
    let last = (2.0 - a) / a;
    e[n] = if chart == SOUTH_CHART { last } else { -last };
    e
}

fn sphere_unembed(n: usize, chart: usize, e: &DVector<f64>) -> Result<DVector<f64>> {
    // South chart inverse: x = e_{1..n} / (1 + e_{n+1}); the excluded pole
    // sits where the denominator vanishes.
    let last = if chart == SOUTH_CHART { e[n] } else { -e[n] };
    let denom = 1.0 + last;
    if denom.abs() < 1e-12 {
        return Err(Error::OffManifold(format!(
            "chart {chart} excludes this pole of the sphere"
        )));
    }
    Ok(e.rows(0, n).into_owned() / denom)
}

/// Jacobian of the chart-to-embedding map, `embedding_dim x dim`.
pub fn embedding_jacobian(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<DMatrix<f64>> {
    check_point(m, p)?;
    match m {
        ManifoldDescriptor::Euclidean { dim } => Ok(DMatrix::identity(*dim, *dim)),
        ManifoldDescriptor::PositiveReals => Ok(DMatrix::identity(1, 1)),
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let n = m.sphere_n().unwrap();
            let x = &p.coords;
            let a = 1.0 + x.norm_squared();
            let sign = if p.chart == SOUTH_CHART { 1.0 } else { -1.0 };
            let mut j = DMatrix::zeros(n + 1, n);
            for i in 0..n {
                for k in 0..n {
                    let delta = if i == k { 1.0 } else { 0.0 };
                    j[(i, k)] = 2.0 * delta / a - 4.0 * x[i] * x[k] / (a * a);
                }
            }
            for k in 0..n {
                j[(n, k)] = sign * (-4.0 * x[k] / (a * a));
            }
            Ok(j)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let mut j = DMatrix::zeros(m.embedding_dim(), m.dim());
            let (mut ro, mut co) = (0, 0);
            for (f, part) in m.factors().zip(&parts) {
                let jf = embedding_jacobian(f, part)?;
                j.view_mut((ro, co), (f.embedding_dim(), f.dim())).copy_from(&jf);
                ro += f.embedding_dim();
                co += f.dim();
            }
            Ok(j)
        }
    }
}

/// Second derivatives of the chart-to-embedding map contracted with nothing:
/// `hess[e][(i, j)] = d^2 phi^e / dx^i dx^j`.
pub fn embedding_hessian(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<Vec<DMatrix<f64>>> {
    check_point(m, p)?;
    let (d_emb, d) = (m.embedding_dim(), m.dim());
    match m {
        ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => {
            Ok(vec![DMatrix::zeros(d, d); d_emb])
        }
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let n = m.sphere_n().unwrap();
            let x = &p.coords;
            let a = 1.0 + x.norm_squared();
            let (a2, a3) = (a * a, a * a * a);
            let sign = if p.chart == SOUTH_CHART { 1.0 } else { -1.0 };
            let mut hess = vec![DMatrix::zeros(n, n); n + 1];
            for e in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let djk = if j == k { 1.0 } else { 0.0 };
                        let dej = if e == j { 1.0 } else { 0.0 };
                        let dek = if e == k { 1.0 } else { 0.0 };
                        hess[e][(j, k)] = -4.0 * (dek * x[j] + dej * x[k] + djk * x[e]) / a2
                            + 16.0 * x[e] * x[j] * x[k] / a3;
                    }
                }
            }
            for j in 0..n {
                for k in 0..n {
                    let djk = if j == k { 1.0 } else { 0.0 };
                    hess[n][(j, k)] = sign * (-4.0 * djk / a2 + 16.0 * x[j] * x[k] / a3);
                }
            }
            Ok(hess)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let mut hess = vec![DMatrix::zeros(d, d); d_emb];
            let (mut ro, mut co) = (0, 0);
            for (f, part) in m.factors().zip(&parts) {
                for (e, he) in embedding_hessian(f, part)?.into_iter().enumerate() {
                    hess[ro + e]
                        .view_mut((co, co), (f.dim(), f.dim()))
                        .copy_from(&he);
                }
                ro += f.embedding_dim();
                co += f.dim();
            }
            Ok(hess)
        }
    }
}

fn check_point(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<()> {
    if p.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: p.dim(),
        });
    }
    if p.chart >= m.chart_count() {
        return Err(Error::InvalidChart {
            chart: p.chart,
            count: m.chart_count(),
        });
    }
    validate_coords(m, p)
}

pub fn chart_to_embedding(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<EmbeddedPoint> {
    check_point(m, p)?;
    let coords = match m {
        ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => {
            p.coords.clone()
        }
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            sphere_embed(m.sphere_n().unwrap(), p.chart, &p.coords)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let mut out = DVector::zeros(m.embedding_dim());
            let mut off = 0;
            for (f, part) in m.factors().zip(&parts) {
                let e = chart_to_embedding(f, part)?;
                out.rows_mut(off, f.embedding_dim()).copy_from(&e.coords);
                off += f.embedding_dim();
            }
            out
        }
    };
    EmbeddedPoint::new(m, coords)
}

/// Inverts the embedding. `preferred = None` applies the hemisphere rule.
pub fn embedding_to_chart(
    m: &ManifoldDescriptor,
    e: &EmbeddedPoint,
    preferred: Option<usize>,
) -> Result<ChartPoint> {
    let scheme = match preferred {
        Some(c) => ChartScheme::Fixed(c),
        None => ChartScheme::Hemisphere,
    };
    let chart = select_chart(m, e, scheme)?;
    embed_inverse(m, e, chart)
}

fn embed_inverse(m: &ManifoldDescriptor, e: &EmbeddedPoint, chart: usize) -> Result<ChartPoint> {
    match m {
        ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => {
            ChartPoint::new(m, chart, e.coords.clone())
        }
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let n = m.sphere_n().unwrap();
            let coords = sphere_unembed(n, chart, &e.coords)?;
            ChartPoint::new(m, chart, coords)
        }
        ManifoldDescriptor::Product(_) => {
            let charts = decode_product_chart(m, chart)?;
            let mut parts = Vec::new();
            let mut off = 0;
            for (f, c) in m.factors().zip(charts) {
                let fe = EmbeddedPoint::new(f, e.coords.rows(off, f.embedding_dim()).into_owned())?;
                parts.push(embed_inverse(f, &fe, c)?);
                off += f.embedding_dim();
            }
            product_join(m, &parts)
        }
    }
}

pub fn select_chart(m: &ManifoldDescriptor, e: &EmbeddedPoint, scheme: ChartScheme) -> Result<usize> {
    if e.coords.len() != m.embedding_dim() {
        return Err(Error::DimensionMismatch {
            expected: m.embedding_dim(),
            got: e.coords.len(),
        });
    }
    match scheme {
        ChartScheme::Fixed(c) => {
            if c >= m.chart_count() {
                return Err(Error::InvalidChart {
                    chart: c,
                    count: m.chart_count(),
                });
            }
            Ok(c)
        }
        ChartScheme::Hemisphere => match m {
            ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => Ok(0),
            ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
                let n = m.sphere_n().unwrap();
                Ok(if e.coords[n] >= 0.0 { SOUTH_CHART } else { NORTH_CHART })
            }
            ManifoldDescriptor::Product(_) => {
                let mut charts = Vec::new();
                let mut off = 0;
                for f in m.factors() {
                    let fe =
                        EmbeddedPoint::new(f, e.coords.rows(off, f.embedding_dim()).into_owned())?;
                    charts.push(select_chart(f, &fe, ChartScheme::Hemisphere)?);
                    off += f.embedding_dim();
                }
                encode_product_chart(m, &charts)
            }
        },
    }
}

/// Re-expresses a point in another chart of the same manifold.
pub fn chart_transition(m: &ManifoldDescriptor, p: &ChartPoint, target: usize) -> Result<ChartPoint> {
    check_point(m, p)?;
    if target >= m.chart_count() {
        return Err(Error::InvalidChart {
            chart: target,
            count: m.chart_count(),
        });
    }
    if target == p.chart {
        return Ok(p.clone());
    }
    match m {
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let r2 = p.coords.norm_squared();
            if r2 < 1e-24 {
                return Err(Error::SingularTransition(
                    "chart origin maps to the target chart's excluded pole".into(),
                ));
            }
            ChartPoint::new(m, target, &p.coords / r2)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let targets = decode_product_chart(m, target)?;
            let moved: Result<Vec<_>> = m
                .factors()
                .zip(parts.iter().zip(targets))
                .map(|(f, (part, t))| chart_transition(f, part, t))
                .collect();
            product_join(m, &moved?)
        }
        // Single-chart manifolds only reach here with target != chart, which
        // InvalidChart already rejected.
        _ => unreachable!(),
    }
}

/// Jacobian of the transition map from `p.chart` to `target` at `p`.
pub fn chart_transition_jacobian(
    m: &ManifoldDescriptor,
    p: &ChartPoint,
    target: usize,
) -> Result<DMatrix<f64>> {
    check_point(m, p)?;
    if target >= m.chart_count() {
        return Err(Error::InvalidChart {
            chart: target,
            count: m.chart_count(),
        });
    }
    if target == p.chart {
        return Ok(DMatrix::identity(m.dim(), m.dim()));
    }
    match m {
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            let x = &p.coords;
            let r2 = x.norm_squared();
            if r2 < 1e-24 {
                return Err(Error::SingularTransition(
                    "chart origin maps to the target chart's excluded pole".into(),
                ));
            }
            let n = m.dim();
            let mut j = DMatrix::zeros(n, n);
            for i in 0..n {
                for k in 0..n {
                    let delta = if i == k { 1.0 } else { 0.0 };
                    j[(i, k)] = delta / r2 - 2.0 * x[i] * x[k] / (r2 * r2);
                }
            }
            Ok(j)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let targets = decode_product_chart(m, target)?;
            let mut j = DMatrix::zeros(m.dim(), m.dim());
            let mut off = 0;
            for (f, (part, t)) in m.factors().zip(parts.iter().zip(targets)) {
                let jf = chart_transition_jacobian(f, part, t)?;
                j.view_mut((off, off), (f.dim(), f.dim())).copy_from(&jf);
                off += f.dim();
            }
            Ok(j)
        }
        _ => unreachable!(),
    }
}

/// Hessian of the transition map contracted twice with `v`:
/// `out^j = v^i v^k d^2 phi^j / dx^i dx^k`.
fn chart_transition_hessian_vv(
    m: &ManifoldDescriptor,
    p: &ChartPoint,
    v: &DVector<f64>,
    target: usize,
) -> Result<DVector<f64>> {
    if target == p.chart {
        return Ok(DVector::zeros(m.dim()));
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
            let xv = x.dot(v);
            let vv = v.norm_squared();
            // For phi(x) = x/|x|^2:
            // H(v,v) = (-4 (x.v) v - 2 |v|^2 x)/s^2 + 8 (x.v)^2 x / s^3
            Ok((v * (-4.0 * xv) - x * (2.0 * vv)) / (s * s) + x * (8.0 * xv * xv / (s * s * s)))
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let vels = product_split_velocity(m, v)?;
            let targets = decode_product_chart(m, target)?;
            let mut out = DVector::zeros(m.dim());
            let mut off = 0;
            for (f, ((part, vf), t)) in m.factors().zip(parts.iter().zip(&vels).zip(targets)) {
                let h = chart_transition_hessian_vv(f, part, vf, t)?;
                out.rows_mut(off, f.dim()).copy_from(&h);
                off += f.dim();
            }
            Ok(out)
        }
        _ => Ok(DVector::zeros(m.dim())),
    }
}

/// Integrator drift correction: a chart -> embedding -> chart round trip,
/// applied per factor. Stereographic coordinates are intrinsic, so this is
/// the identity up to rounding; it is skipped beyond chart radius 1e3 where
/// reconstructing `x = e/(1 +- e_last)` cancels catastrophically (and fails
/// outright at the excluded pole, which a fixed-chart integration can
/// legitimately approach).
pub fn renormalize_point(m: &ManifoldDescriptor, p: &ChartPoint) -> Result<ChartPoint> {
    match m {
        ManifoldDescriptor::Euclidean { .. } | ManifoldDescriptor::PositiveReals => Ok(p.clone()),
        ManifoldDescriptor::Circle | ManifoldDescriptor::Sphere2 => {
            if p.coords.amax() >= 1e3 {
                return Ok(p.clone());
            }
            let e = chart_to_embedding(m, p)?;
            embed_inverse(m, &e, p.chart)
        }
        ManifoldDescriptor::Product(_) => {
            let parts = product_split(m, p)?;
            let fixed: Result<Vec<_>> = m
                .factors()
                .zip(&parts)
                .map(|(f, part)| renormalize_point(f, part))
                .collect();
            product_join(m, &fixed?)
        }
    }
}

/// Moves a tangent state to another chart: position through the transition
/// map, velocity through its Jacobian.
pub fn transition_tangent(
    m: &ManifoldDescriptor,
    s: &TangentState,
    target: usize,
) -> Result<TangentState> {
    let point = chart_transition(m, &s.point, target)?;
    let j = chart_transition_jacobian(m, &s.point, target)?;
    TangentState::new(point, &j * &s.velocity)
}

/// Moves a curve's (position, velocity, acceleration) to another chart.
///
/// Velocities transform with the transition Jacobian; accelerations pick up
/// the second-derivative term of the transition map.
pub fn transition_acceleration(
    m: &ManifoldDescriptor,
    s: &TangentState,
    accel: &DVector<f64>,
    target: usize,
) -> Result<(TangentState, DVector<f64>)> {
    let j = chart_transition_jacobian(m, &s.point, target)?;
    let moved = transition_tangent(m, s, target)?;
    let hvv = chart_transition_hessian_vv(m, &s.point, &s.velocity, target)?;
    Ok((moved, &j * accel + hvv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sphere() -> ManifoldDescriptor {
        ManifoldDescriptor::Sphere2
    }

    fn cp(m: &ManifoldDescriptor, chart: usize, coords: &[f64]) -> ChartPoint {
        ChartPoint::new(m, chart, DVector::from_row_slice(coords)).unwrap()
    }

    #[test]
    fn south_chart_origin_is_north_pole() {
        let e = chart_to_embedding(&sphere(), &cp(&sphere(), SOUTH_CHART, &[0.0, 0.0])).unwrap();
        assert_relative_eq!(e.coords[0], 0.0);
        assert_relative_eq!(e.coords[1], 0.0);
        assert_relative_eq!(e.coords[2], 1.0);
        // and inverts back
        let p = embedding_to_chart(&sphere(), &e, Some(SOUTH_CHART)).unwrap();
        assert!(p.coords.norm() < 1e-14);
    }

    #[test]
    fn south_chart_unit_point_lands_on_equator() {
        let e = chart_to_embedding(&sphere(), &cp(&sphere(), SOUTH_CHART, &[1.0, 0.0])).unwrap();
        assert_relative_eq!(e.coords[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(e.coords[2], 0.0, epsilon = 1e-15);
        assert_relative_eq!(e.coords.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn euclidean_embedding_is_identity() {
        let m = ManifoldDescriptor::euclidean(3);
        let p = cp(&m, 0, &[1.5, -2.0, 0.0]);
        let e = chart_to_embedding(&m, &p).unwrap();
        assert_eq!(e.coords, p.coords);
        let back = embedding_to_chart(&m, &e, None).unwrap();
        assert_eq!(back.coords, p.coords);
    }

    #[test]
    fn stereographic_matches_standard_inverse_projection() {
        // phi_+(x) = (2x, 1 - |x|^2) / (1 + |x|^2)
        for x in [[0.3, -0.7], [2.0, 1.0], [0.0, 5.0]] {
            let p = cp(&sphere(), SOUTH_CHART, &x);
            let e = chart_to_embedding(&sphere(), &p).unwrap();
            let r2 = x[0] * x[0] + x[1] * x[1];
            assert_relative_eq!(e.coords[0], 2.0 * x[0] / (1.0 + r2), epsilon = 1e-14);
            assert_relative_eq!(e.coords[1], 2.0 * x[1] / (1.0 + r2), epsilon = 1e-14);
            assert_relative_eq!(e.coords[2], (1.0 - r2) / (1.0 + r2), epsilon = 1e-14);
        }
    }

    #[test]
    fn excluded_pole_is_rejected() {
        let e = EmbeddedPoint::new(&sphere(), DVector::from_row_slice(&[0.0, 0.0, -1.0])).unwrap();
        assert!(embedding_to_chart(&sphere(), &e, Some(SOUTH_CHART)).is_err());
        // hemisphere rule picks the north chart instead
        let p = embedding_to_chart(&sphere(), &e, None).unwrap();
        assert_eq!(p.chart, NORTH_CHART);
        assert!(p.coords.norm() < 1e-14);
    }

    #[test]
    fn transition_example_from_chart_formulas() {
        let p = cp(&sphere(), SOUTH_CHART, &[2.0, 0.0]);
        let q = chart_transition(&sphere(), &p, NORTH_CHART).unwrap();
        assert_relative_eq!(q.coords[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(q.coords[1], 0.0, epsilon = 1e-15);

        // unit-norm points are fixed by x / |x|^2
        let u = cp(&sphere(), SOUTH_CHART, &[1.0, 0.0]);
        let u2 = chart_transition(&sphere(), &u, NORTH_CHART).unwrap();
        assert_relative_eq!(u2.coords[0], 1.0, epsilon = 1e-15);

        // same-chart request is the identity
        let same = chart_transition(&sphere(), &p, SOUTH_CHART).unwrap();
        assert_eq!(same, p);
    }

    #[test]
    fn transition_at_origin_is_singular() {
        let p = cp(&sphere(), SOUTH_CHART, &[0.0, 0.0]);
        assert!(chart_transition(&sphere(), &p, NORTH_CHART).is_err());
    }

    #[test]
    fn tangent_transition_example() {
        let s = TangentState::new(
            cp(&sphere(), SOUTH_CHART, &[2.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let t = transition_tangent(&sphere(), &s, NORTH_CHART).unwrap();
        assert_relative_eq!(t.velocity[0], -0.25, epsilon = 1e-14);
        assert_relative_eq!(t.velocity[1], 0.0, epsilon = 1e-14);

        // zero velocity stays zero
        let s0 = TangentState::new(cp(&sphere(), SOUTH_CHART, &[2.0, 0.0]), DVector::zeros(2)).unwrap();
        let t0 = transition_tangent(&sphere(), &s0, NORTH_CHART).unwrap();
        assert!(t0.velocity.norm() == 0.0);
    }

    #[test]
    fn tangent_transition_round_trip() {
        let s = TangentState::new(
            cp(&sphere(), SOUTH_CHART, &[0.8, -1.3]),
            DVector::from_row_slice(&[0.4, 2.0]),
        )
        .unwrap();
        let t = transition_tangent(&sphere(), &s, NORTH_CHART).unwrap();
        let back = transition_tangent(&sphere(), &t, SOUTH_CHART).unwrap();
        assert_relative_eq!(back.point.coords, s.point.coords, epsilon = 1e-10);
        assert_relative_eq!(back.velocity, s.velocity, epsilon = 1e-10);
    }

    #[test]
    fn tangent_transition_matches_finite_differences_of_curve() {
        // Sample a smooth curve in the south chart, transition both endpoints
        // and compare the finite-difference velocity with the Jacobian push.
        let h = 1e-5;
        let curve = |t: f64| {
            DVector::from_row_slice(&[0.9 + 0.3 * (2.0 * t).sin(), -0.4 + t * t + 0.5 * t])
        };
        let vel = |t: f64| (curve(t + h) - curve(t - h)) / (2.0 * h);
        let t0 = 0.3;
        let s = TangentState::new(
            ChartPoint::new(&sphere(), SOUTH_CHART, curve(t0)).unwrap(),
            vel(t0),
        )
        .unwrap();
        let moved = transition_tangent(&sphere(), &s, NORTH_CHART).unwrap();

        let at = |t: f64| {
            chart_transition(
                &sphere(),
                &ChartPoint::new(&sphere(), SOUTH_CHART, curve(t)).unwrap(),
                NORTH_CHART,
            )
            .unwrap()
            .coords
        };
        let fd = (at(t0 + h) - at(t0 - h)) / (2.0 * h);
        assert_relative_eq!(moved.velocity, fd, epsilon = 1e-3);
    }

    #[test]
    fn hemisphere_selection_and_tie_break() {
        let m = sphere();
        let north = EmbeddedPoint::new(&m, DVector::from_row_slice(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(select_chart(&m, &north, ChartScheme::Hemisphere).unwrap(), SOUTH_CHART);
        let equator = EmbeddedPoint::new(&m, DVector::from_row_slice(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(select_chart(&m, &equator, ChartScheme::Hemisphere).unwrap(), SOUTH_CHART);
        let south = EmbeddedPoint::new(&m, DVector::from_row_slice(&[0.0, 0.4, -0.916515138991168]))
            .unwrap();
        assert_eq!(select_chart(&m, &south, ChartScheme::Hemisphere).unwrap(), NORTH_CHART);
        assert_eq!(select_chart(&m, &south, ChartScheme::Fixed(NORTH_CHART)).unwrap(), NORTH_CHART);
    }

    #[test]
    fn product_join_split_and_embedding() {
        let m = ManifoldDescriptor::Product(vec![sphere(), ManifoldDescriptor::euclidean(1)]);
        assert_eq!(m.dim(), 3);
        assert_eq!(m.embedding_dim(), 4);
        assert_eq!(m.chart_count(), 2);

        let s2 = cp(&sphere(), SOUTH_CHART, &[0.0, 0.0]);
        let r = cp(&ManifoldDescriptor::euclidean(1), 0, &[5.0]);
        let joined = product_join(&m, &[s2.clone(), r.clone()]).unwrap();
        assert_eq!(joined.coords.as_slice(), &[0.0, 0.0, 5.0]);

        let parts = product_split(&m, &joined).unwrap();
        assert_eq!(parts[0], s2);
        assert_eq!(parts[1], r);

        let e = chart_to_embedding(&m, &joined).unwrap();
        assert_eq!(e.coords.as_slice(), &[0.0, 0.0, 1.0, 5.0]);
    }

    #[test]
    fn product_chart_ids_are_mixed_radix() {
        let m = ManifoldDescriptor::Product(vec![sphere(), ManifoldDescriptor::Circle]);
        assert_eq!(m.chart_count(), 4);
        for (s, c) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let id = encode_product_chart(&m, &[s, c]).unwrap();
            assert_eq!(decode_product_chart(&m, id).unwrap(), vec![s, c]);
        }
        assert_eq!(encode_product_chart(&m, &[1, 1]).unwrap(), 3);
    }

    #[test]
    fn positive_reals_reject_nonpositive() {
        let m = ManifoldDescriptor::PositiveReals;
        assert!(ChartPoint::new(&m, 0, DVector::from_row_slice(&[0.5])).is_ok());
        assert!(ChartPoint::new(&m, 0, DVector::from_row_slice(&[0.0])).is_err());
        assert!(ChartPoint::new(&m, 0, DVector::from_row_slice(&[-1.0])).is_err());
    }

    #[test]
    fn off_manifold_beyond_tolerance_is_rejected() {
        let m = sphere();
        assert!(EmbeddedPoint::new(&m, DVector::from_row_slice(&[1.1, 0.0, 0.0])).is_err());
        // within tolerance: silently renormalized
        let e = EmbeddedPoint::new(&m, DVector::from_row_slice(&[1.0 + 5e-10, 0.0, 0.0])).unwrap();
        assert!((e.coords.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn embedding_jacobian_matches_finite_differences() {
        let m = sphere();
        for chart in [SOUTH_CHART, NORTH_CHART] {
            let p = cp(&m, chart, &[0.7, -1.2]);
            let j = embedding_jacobian(&m, &p).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let mut up = p.coords.clone();
                let mut dn = p.coords.clone();
                up[k] += h;
                dn[k] -= h;
                let eu = chart_to_embedding(&m, &ChartPoint::new(&m, chart, up).unwrap()).unwrap();
                let ed = chart_to_embedding(&m, &ChartPoint::new(&m, chart, dn).unwrap()).unwrap();
                let fd = (eu.coords - ed.coords) / (2.0 * h);
                for r in 0..3 {
                    assert_relative_eq!(j[(r, k)], fd[r], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn embedding_hessian_matches_finite_differences() {
        let m = sphere();
        let p = cp(&m, SOUTH_CHART, &[0.4, 0.9]);
        let hess = embedding_hessian(&m, &p).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut up = p.coords.clone();
            let mut dn = p.coords.clone();
            up[k] += h;
            dn[k] -= h;
            let ju = embedding_jacobian(&m, &ChartPoint::new(&m, SOUTH_CHART, up).unwrap()).unwrap();
            let jd = embedding_jacobian(&m, &ChartPoint::new(&m, SOUTH_CHART, dn).unwrap()).unwrap();
            let fd = (ju - jd) / (2.0 * h);
            for e in 0..3 {
                for j in 0..2 {
                    assert_relative_eq!(hess[e][(j, k)], fd[(e, j)], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn acceleration_transition_matches_second_derivative_of_curve() {
        let m = sphere();
        let h = 1e-4;
        let curve = |t: f64| DVector::from_row_slice(&[1.1 + 0.2 * t.sin(), -0.5 + 0.7 * t]);
        let t0 = 0.2;
        let vel = (curve(t0 + h) - curve(t0 - h)) / (2.0 * h);
        let acc = (curve(t0 + h) - curve(t0) * 2.0 + curve(t0 - h)) / (h * h);
        let s = TangentState::new(ChartPoint::new(&m, SOUTH_CHART, curve(t0)).unwrap(), vel).unwrap();
        let (_, acc_n) = transition_acceleration(&m, &s, &acc, NORTH_CHART).unwrap();

        let mapped = |t: f64| {
            chart_transition(
                &m,
                &ChartPoint::new(&m, SOUTH_CHART, curve(t)).unwrap(),
                NORTH_CHART,
            )
            .unwrap()
            .coords
        };
        let fd_acc = (mapped(t0 + h) - mapped(t0) * 2.0 + mapped(t0 - h)) / (h * h);
        assert_relative_eq!(acc_n, fd_acc, epsilon = 1e-5);
    }
}
