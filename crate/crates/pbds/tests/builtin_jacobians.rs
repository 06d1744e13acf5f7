//! Finite-difference oracles for every built-in task map: analytic Jacobians
//! within 1e-5 of central differences, and velocity-contracted second
//! derivatives within 1e-4 of differenced Jacobians, at random states.

use nalgebra::DVector;
use pbds::manifold::{ChartPoint, EmbeddedPoint, ManifoldDescriptor};
use pbds::task::{fd_jacobian, AmbientDistanceMap, GeodesicDistanceMap, IdentityMap, TaskMap};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn sphere() -> ManifoldDescriptor {
    ManifoldDescriptor::Sphere2
}

fn random_sphere_point(rng: &mut ChaCha8Rng) -> ChartPoint {
    ChartPoint::new(
        &sphere(),
        rng.random_range(0..2usize),
        DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5)),
    )
    .unwrap()
}

/// Reference for jacobian_dot: difference the map's own Jacobian along the
/// straight chart line through `p` with velocity `v`.
fn jdot_reference(map: &dyn TaskMap, p: &ChartPoint, v: &DVector<f64>, h: f64) -> nalgebra::DMatrix<f64> {
    let at = |t: f64| {
        map.jacobian(&ChartPoint::new(map.domain(), p.chart, &p.coords + v * t).unwrap())
            .unwrap()
    };
    (at(h) - at(-h)) / (2.0 * h)
}

#[test]
fn attractor_distance_map_oracles() {
    let map = GeodesicDistanceMap::new(
        sphere(),
        EmbeddedPoint::new(&sphere(), DVector::from_row_slice(&[0.0, 0.0, 1.0])).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 100 {
        let p = random_sphere_point(&mut rng);
        let d = map.distance(&p).unwrap();
        if d < 5e-2 || d > std::f64::consts::PI - 5e-2 {
            continue;
        }
        let j = map.jacobian(&p).unwrap();
        let fd = fd_jacobian(&map, &p).unwrap();
        assert!((j.clone() - fd).amax() < 1e-5, "jacobian mismatch at {:?}", p.coords);

        let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let jd = map.jacobian_dot(&p, &v).unwrap();
        let ref_jd = jdot_reference(&map, &p, &v, 1e-5);
        assert!((jd - ref_jd).amax() < 1e-4, "jdot mismatch at {:?}", p.coords);
        checked += 1;
    }
}

#[test]
fn euclidean_distance_map_oracles() {
    let m = ManifoldDescriptor::euclidean(3);
    let map = GeodesicDistanceMap::new(
        m.clone(),
        EmbeddedPoint::new(&m, DVector::from_row_slice(&[0.5, -1.0, 2.0])).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 100 {
        let p = ChartPoint::new(&m, 0, DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)))
            .unwrap();
        if map.distance(&p).unwrap() < 0.1 {
            continue;
        }
        let j = map.jacobian(&p).unwrap();
        let fd = fd_jacobian(&map, &p).unwrap();
        assert!((j - fd).amax() < 1e-5);
        let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let jd = map.jacobian_dot(&p, &v).unwrap();
        let ref_jd = jdot_reference(&map, &p, &v, 1e-5);
        assert!((jd - ref_jd).amax() < 1e-4);
        checked += 1;
    }
}

#[test]
fn obstacle_distance_map_oracles() {
    let map = AmbientDistanceMap::new(
        sphere(),
        DVector::from_row_slice(&[0.7071067811865476, 0.0, 0.7071067811865476]),
        0.15,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 100 {
        let p = random_sphere_point(&mut rng);
        if map.distance(&p).unwrap() < 0.1 {
            continue;
        }
        let j = map.jacobian(&p).unwrap();
        let fd = fd_jacobian(&map, &p).unwrap();
        assert!((j - fd).amax() < 1e-5);
        let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let jd = map.jacobian_dot(&p, &v).unwrap();
        let ref_jd = jdot_reference(&map, &p, &v, 1e-5);
        assert!((jd - ref_jd).amax() < 1e-4);
        checked += 1;
    }
}

#[test]
fn identity_map_oracles() {
    let map = IdentityMap::new(sphere());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p = random_sphere_point(&mut rng);
        let j = map.jacobian(&p).unwrap();
        let fd = fd_jacobian(&map, &p).unwrap();
        assert!((j - fd).amax() < 1e-5);
        let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        assert!(map.jacobian_dot(&p, &v).unwrap().amax() == 0.0);
    }
}
