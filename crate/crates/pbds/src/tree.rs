//! Task-map tree evaluation: the reuse quantities `P`, `A`, `B`, `F`, `xi`
//! flow from leaf tasks through shared intermediate maps to the root, where
//! the policy is reconstructed as `P^+ (F - (A + xi) v)`. A tree evaluation
//! is numerically equivalent to the flat policy over the composed task maps.

use crate::error::{Error, Result};
use crate::manifold::TangentState;
use crate::policy::{pseudo_inverse, PolicyDiagnostics, PolicyOutput, PINV_REL_CUTOFF};
use crate::riemannian::{christoffel, invert_metric, Tensor3};
use crate::task::{ComposedMap, TaskMap, TaskSpec};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Quantities pulled up the tree, sized by the dimension of the manifold the
/// node's map comes from.
#[derive(Debug, Clone)]
pub struct TreeNodeData {
    pub p: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DVector<f64>,
    pub xi: Tensor3,
}

impl TreeNodeData {
    fn zeros(m: usize) -> Self {
        TreeNodeData {
            p: DMatrix::zeros(m, m),
            a: DMatrix::zeros(m, m),
            b: DMatrix::zeros(m, m),
            f: DVector::zeros(m),
            xi: Tensor3::zeros(m, m, m),
        }
    }

    fn accumulate(&mut self, other: &TreeNodeData) {
        self.p += &other.p;
        self.a += &other.a;
        self.b += &other.b;
        self.f += &other.f;
        for (dst, src) in self.xi.iter_mut().zip(other.xi.clone().iter_mut()) {
            *dst += *src;
        }
    }
}

pub enum TreeNode {
    Leaf(TaskSpec),
    Branch {
        map: Arc<dyn TaskMap>,
        children: Vec<TreeNode>,
    },
}

/// A task-map tree rooted at the robot configuration manifold.
pub struct TaskTree {
    pub children: Vec<TreeNode>,
}

impl TaskTree {
    /// Single-level tree: every task hangs directly off the root.
    pub fn flat(tasks: &[TaskSpec]) -> Self {
        TaskTree {
            children: tasks.iter().cloned().map(TreeNode::Leaf).collect(),
        }
    }

    /// The equivalent flat task list, composing each leaf's map with the
    /// branch maps above it.
    pub fn flatten(&self) -> Result<Vec<TaskSpec>> {
        let mut out = Vec::new();
        for child in &self.children {
            flatten_into(child, None, &mut out)?;
        }
        Ok(out)
    }

    /// Evaluates the policy by propagating node data up the tree.
    pub fn evaluate(&self, state: &TangentState) -> Result<PolicyOutput> {
        if self.children.is_empty() {
            return Err(Error::Unsupported("tree has no tasks".into()));
        }
        let mut children = Vec::with_capacity(self.children.len());
        for child in &self.children {
            children.push(node_data(child, state)?);
        }
        tree_root_combine(&children, state)
    }
}

fn flatten_into(
    node: &TreeNode,
    prefix: Option<Arc<dyn TaskMap>>,
    out: &mut Vec<TaskSpec>,
) -> Result<()> {
    match node {
        TreeNode::Leaf(task) => {
            let mut flat = task.clone();
            if let Some(prefix) = prefix {
                flat.map = Arc::new(ComposedMap::new(prefix, task.map.clone())?);
            }
            out.push(flat);
        }
        TreeNode::Branch { map, children } => {
            let composed: Arc<dyn TaskMap> = match prefix {
                Some(prefix) => Arc::new(ComposedMap::new(prefix, map.clone())?),
                None => map.clone(),
            };
            for child in children {
                flatten_into(child, Some(composed.clone()), out)?;
            }
        }
    }
    Ok(())
}

fn node_data(node: &TreeNode, state: &TangentState) -> Result<TreeNodeData> {
    match node {
        TreeNode::Leaf(task) => tree_leaf_init(task, state),
        TreeNode::Branch { map, children } => {
            let y = map.eval(&state.point)?;
            let jf = map.jacobian(&state.point)?;
            let jf_dot = map.jacobian_dot(&state.point, &state.velocity)?;
            let child_state = TangentState::new(y, &jf * &state.velocity)?;
            let mut summed = TreeNodeData::zeros(map.codomain().dim());
            for child in children {
                summed.accumulate(&node_data(child, &child_state)?);
            }
            Ok(tree_intermediate_combine(&summed, &jf, &jf_dot))
        }
    }
}

/// Leaf initialization:
/// `P = B = Jf^T w Jf`, `A = Jf^T w Jfdot`,
/// `F = Jf^T w g^-1 (F_D - dPhi)`,
/// `xi^q_sr = Jf_tq w_te Jf_as Gamma^e_ab Jf_br`.
pub fn tree_leaf_init(task: &TaskSpec, state: &TangentState) -> Result<TreeNodeData> {
    let m = state.point.dim();
    let (y, jf, ydot) = task.image(state)?;
    let w = task.weight.matrix(&y, &ydot);
    if w.amax() == 0.0 {
        return Ok(TreeNodeData::zeros(m));
    }
    let n = w.nrows();

    let jf_dot = task.map.jacobian_dot(&state.point, &state.velocity)?;
    let jt_w = jf.transpose() * &w;

    let p = &jt_w * &jf;
    let a = &jt_w * &jf_dot;
    let g_inv = invert_metric(&task.metric.matrix(&y))?;
    let f = &jt_w * (g_inv * (task.force.force(&y, &ydot) - task.potential.gradient(&y)));

    let gamma = christoffel(task.metric.as_ref(), &y)?;
    // qq^e_sr = Gamma^e_ab Jf_as Jf_br, then xi^q_sr = (Jf^T w)_qe qq^e_sr
    let mut xi = Tensor3::zeros(m, m, m);
    for e in 0..n {
        let mut qq = DMatrix::<f64>::zeros(m, m);
        for al in 0..n {
            for be in 0..n {
                let g = gamma.get(e, al, be);
                if g == 0.0 {
                    continue;
                }
                for s in 0..m {
                    let left = jf[(al, s)] * g;
                    if left == 0.0 {
                        continue;
                    }
                    for r in 0..m {
                        qq[(s, r)] += left * jf[(be, r)];
                    }
                }
            }
        }
        for q in 0..m {
            let scale = jt_w[(q, e)];
            if scale == 0.0 {
                continue;
            }
            for s in 0..m {
                for r in 0..m {
                    xi.add(q, s, r, scale * qq[(s, r)]);
                }
            }
        }
    }

    Ok(TreeNodeData {
        p: p.clone(),
        a,
        b: p,
        f,
        xi,
    })
}

/// Intermediate combination through an edge map with Jacobian `jf` and
/// velocity-contracted second derivative `jf_dot`:
/// `P = Jf^T (sum P_c) Jf`, `B = Jf^T (sum B_c) Jf`,
/// `A = Jf^T ((sum A_c) Jf + (sum B_c) Jfdot)`, `F = Jf^T sum F_c`,
/// `xi^k_hl = Jf_qk Jf_sh (sum xi_c)^q_sr Jf_rl`.
pub fn tree_intermediate_combine(
    summed: &TreeNodeData,
    jf: &DMatrix<f64>,
    jf_dot: &DMatrix<f64>,
) -> TreeNodeData {
    let m = jf.ncols();
    let n = jf.nrows();
    let p = jf.transpose() * &summed.p * jf;
    let b = jf.transpose() * &summed.b * jf;
    let a = jf.transpose() * (&summed.a * jf + &summed.b * jf_dot);
    let f = jf.transpose() * &summed.f;

    // contract one index at a time
    let mut t1 = Tensor3::zeros(n, n, m); // (q, s, l)
    for q in 0..n {
        for s in 0..n {
            for r in 0..n {
                let v = summed.xi.get(q, s, r);
                if v == 0.0 {
                    continue;
                }
                for l in 0..m {
                    t1.add(q, s, l, v * jf[(r, l)]);
                }
            }
        }
    }
    let mut t2 = Tensor3::zeros(n, m, m); // (q, h, l)
    for q in 0..n {
        for s in 0..n {
            for h in 0..m {
                let left = jf[(s, h)];
                if left == 0.0 {
                    continue;
                }
                for l in 0..m {
                    t2.add(q, h, l, left * t1.get(q, s, l));
                }
            }
        }
    }
    let mut xi = Tensor3::zeros(m, m, m); // (k, h, l)
    for q in 0..n {
        for k in 0..m {
            let left = jf[(q, k)];
            if left == 0.0 {
                continue;
            }
            for h in 0..m {
                for l in 0..m {
                    xi.add(k, h, l, left * t2.get(q, h, l));
                }
            }
        }
    }

    TreeNodeData { p, a, b, f, xi }
}

/// Root combination: sums child data and solves
/// `P^+ (F - (A + xi) v)` with `xi_kl = (sum xi_c)^k_hl v^h`.
pub fn tree_root_combine(children: &[TreeNodeData], state: &TangentState) -> Result<PolicyOutput> {
    let m = state.point.dim();
    let mut total = TreeNodeData::zeros(m);
    for c in children {
        total.accumulate(c);
    }

    let mut xi_mat = DMatrix::zeros(m, m);
    for k in 0..m {
        for h in 0..m {
            let vh = state.velocity[h];
            if vh == 0.0 {
                continue;
            }
            for l in 0..m {
                xi_mat[(k, l)] += total.xi.get(k, h, l) * vh;
            }
        }
    }

    if total.p.amax() == 0.0 {
        return Ok(PolicyOutput {
            acceleration: DVector::zeros(m),
            diagnostics: PolicyDiagnostics {
                mass_condition: f64::INFINITY,
                active_tasks: 0,
                all_weights_zero: true,
                residuals: Vec::new(),
            },
        });
    }

    let rhs = &total.f - (&total.a + xi_mat) * &state.velocity;
    let acceleration = pseudo_inverse(&total.p, PINV_REL_CUTOFF) * rhs;
    if !acceleration.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("tree acceleration".into()));
    }
    let sv = total.p.singular_values();
    let mass_condition = if sv.min() > 0.0 {
        (sv.max() / sv.min()).max(1.0)
    } else {
        f64::INFINITY
    };
    Ok(PolicyOutput {
        acceleration,
        diagnostics: PolicyDiagnostics {
            mass_condition,
            active_tasks: children.len(),
            all_weights_zero: false,
            residuals: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{ChartPoint, ManifoldDescriptor};
    use crate::policy::combine;
    use crate::riemannian::{ConstantMetric, ConstantWeight, Potential, ZeroForce};
    use crate::task::{IdentityMap, TaskKind};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    struct NormSquared;

    impl Potential for NormSquared {
        fn value(&self, y: &ChartPoint) -> f64 {
            y.coords.norm_squared()
        }
        fn gradient(&self, y: &ChartPoint) -> DVector<f64> {
            2.0 * &y.coords
        }
    }

    struct Scale {
        factor: f64,
        domain: ManifoldDescriptor,
    }

    impl TaskMap for Scale {
        fn domain(&self) -> &ManifoldDescriptor {
            &self.domain
        }
        fn codomain(&self) -> &ManifoldDescriptor {
            &self.domain
        }
        fn eval(&self, p: &ChartPoint) -> crate::error::Result<ChartPoint> {
            ChartPoint::new(&self.domain, 0, self.factor * &p.coords)
        }
        fn jacobian(&self, _p: &ChartPoint) -> crate::error::Result<DMatrix<f64>> {
            Ok(self.factor * DMatrix::identity(self.domain.dim(), self.domain.dim()))
        }
        fn jacobian_dot(
            &self,
            _p: &ChartPoint,
            _v: &DVector<f64>,
        ) -> crate::error::Result<DMatrix<f64>> {
            Ok(DMatrix::zeros(self.domain.dim(), self.domain.dim()))
        }
    }

    #[test]
    fn leaf_chain_hand_values() {
        // f(x) = 2x, w = 1, g = 1, Phi = y^2 at x = 1:
        // P = B = 4, A = 0, F = 2 * (-(2 * 2)) = -8.
        let r1 = ManifoldDescriptor::euclidean(1);
        let task = TaskSpec {
            name: "chain".into(),
            kind: TaskKind::Custom,
            map: std::sync::Arc::new(Scale {
                factor: 2.0,
                domain: r1.clone(),
            }),
            metric: std::sync::Arc::new(ConstantMetric::identity(r1.clone())),
            potential: std::sync::Arc::new(NormSquared),
            force: std::sync::Arc::new(ZeroForce { dim: 1 }),
            weight: std::sync::Arc::new(ConstantWeight(DMatrix::identity(1, 1))),
        };
        let s = TangentState::new(
            ChartPoint::new(&r1, 0, DVector::from_element(1, 1.0)).unwrap(),
            DVector::from_element(1, 0.3),
        )
        .unwrap();
        let data = tree_leaf_init(&task, &s).unwrap();
        assert_relative_eq!(data.p[(0, 0)], 4.0);
        assert_relative_eq!(data.b[(0, 0)], 4.0);
        assert_relative_eq!(data.a[(0, 0)], 0.0);
        assert_relative_eq!(data.f[0], -8.0);
        // flat policy agrees with the one-leaf tree
        let tree = TaskTree::flat(std::slice::from_ref(&task));
        let flat = combine(&[task], &s).unwrap();
        let via_tree = tree.evaluate(&s).unwrap();
        assert_relative_eq!(flat.acceleration, via_tree.acceleration, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_leaf_is_all_zero() {
        let r2 = ManifoldDescriptor::euclidean(2);
        let task = TaskSpec {
            name: "off".into(),
            kind: TaskKind::Custom,
            map: std::sync::Arc::new(IdentityMap::new(r2.clone())),
            metric: std::sync::Arc::new(ConstantMetric::identity(r2.clone())),
            potential: std::sync::Arc::new(NormSquared),
            force: std::sync::Arc::new(ZeroForce { dim: 2 }),
            weight: std::sync::Arc::new(ConstantWeight(DMatrix::zeros(2, 2))),
        };
        let s = TangentState::new(
            ChartPoint::new(&r2, 0, DVector::from_row_slice(&[1.0, 2.0])).unwrap(),
            DVector::from_row_slice(&[0.5, -0.5]),
        )
        .unwrap();
        let data = tree_leaf_init(&task, &s).unwrap();
        assert_eq!(data.p.amax(), 0.0);
        assert_eq!(data.f.amax(), 0.0);
    }

    #[test]
    fn all_zero_weight_tree_returns_flagged_zero() {
        let r2 = ManifoldDescriptor::euclidean(2);
        let task = TaskSpec {
            name: "off".into(),
            kind: TaskKind::Custom,
            map: std::sync::Arc::new(IdentityMap::new(r2.clone())),
            metric: std::sync::Arc::new(ConstantMetric::identity(r2.clone())),
            potential: std::sync::Arc::new(NormSquared),
            force: std::sync::Arc::new(ZeroForce { dim: 2 }),
            weight: std::sync::Arc::new(ConstantWeight(DMatrix::zeros(2, 2))),
        };
        let s = TangentState::new(
            ChartPoint::new(&r2, 0, DVector::from_row_slice(&[1.0, -2.0])).unwrap(),
            DVector::from_row_slice(&[0.3, 0.3]),
        )
        .unwrap();
        let out = TaskTree::flat(&[task]).evaluate(&s).unwrap();
        assert!(out.diagnostics.all_weights_zero);
        assert_eq!(out.acceleration.amax(), 0.0);
    }

    #[test]
    fn single_identity_branch_passes_through() {
        let r2 = ManifoldDescriptor::euclidean(2);
        let task = TaskSpec {
            name: "quad".into(),
            kind: TaskKind::Custom,
            map: std::sync::Arc::new(Scale {
                factor: 1.5,
                domain: r2.clone(),
            }),
            metric: std::sync::Arc::new(ConstantMetric::identity(r2.clone())),
            potential: std::sync::Arc::new(NormSquared),
            force: std::sync::Arc::new(ZeroForce { dim: 2 }),
            weight: std::sync::Arc::new(ConstantWeight(DMatrix::identity(2, 2))),
        };
        let s = TangentState::new(
            ChartPoint::new(&r2, 0, DVector::from_row_slice(&[0.2, -0.8])).unwrap(),
            DVector::from_row_slice(&[1.0, 0.4]),
        )
        .unwrap();
        let direct = node_data(&TreeNode::Leaf(task.clone()), &s).unwrap();
        let through_identity = node_data(
            &TreeNode::Branch {
                map: std::sync::Arc::new(IdentityMap::new(r2.clone())),
                children: vec![TreeNode::Leaf(task)],
            },
            &s,
        )
        .unwrap();
        assert_relative_eq!(direct.p, through_identity.p, epsilon = 1e-12);
        assert_relative_eq!(direct.a, through_identity.a, epsilon = 1e-12);
        assert_relative_eq!(direct.f, through_identity.f, epsilon = 1e-12);
    }
}
