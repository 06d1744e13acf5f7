//! The multi-task acceleration policy: per-task pullback quantities, their
//! closed-form weighted least-squares fusion, and an independently coded
//! numeric least-squares oracle.
//!
//! Each task contributes a desired codomain acceleration
//! `gammadd = g^-1 (F_D - dPhi) - Gamma(ydot, ydot)` evaluated at its image,
//! and the robot acceleration minimizes
//! `sum_i 1/2 | Jf_i a + Jfdot_i v - gammadd_i |^2_{w_i}`,
//! whose normal equations give
//! `a = (sum Jf^T w Jf)^+ (sum Jf^T w A)` with
//! `A = g^-1 (F_D - dPhi) - (Jfdot + Xi) v`.

use crate::error::{Error, Result};
use crate::manifold::TangentState;
use crate::riemannian::{christoffel, invert_metric, Tensor3};
use crate::task::TaskSpec;
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff for the Moore-Penrose pseudoinverse.
pub const PINV_REL_CUTOFF: f64 = 1e-10;

/// The per-task quantities entering the fusion.
#[derive(Debug, Clone)]
pub struct TaskAcceleration {
    /// Task-map Jacobian, `n x m`.
    pub jf: DMatrix<f64>,
    /// Velocity-contracted second derivative of the task map, `n x m`.
    pub jf_dot: DMatrix<f64>,
    /// Curvature contraction `Xi_kj = Gamma^k_lh Jf_lj ydot_h`, `n x m`.
    pub xi: DMatrix<f64>,
    /// Desired contribution `A = g^-1 (F_D - dPhi) - (Jfdot + Xi) v`.
    pub accel: DVector<f64>,
    /// Weighting pseudometric block at the image, `n x n`.
    pub w_a: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyDiagnostics {
    pub mass_condition: f64,
    pub active_tasks: usize,
    pub all_weights_zero: bool,
    /// Weighted residual norm per task, in task order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub acceleration: DVector<f64>,
    pub diagnostics: PolicyDiagnostics,
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    svd.pseudo_inverse(rel_cutoff * smax)
        .expect("cutoff is non-negative")
}

/// `Xi_kj = sum_lh Gamma^k_lh Jf_lj ydot_h`.
fn xi_matrix(gamma: &Tensor3, jf: &DMatrix<f64>, ydot: &DVector<f64>) -> DMatrix<f64> {
    let (n, m) = (jf.nrows(), jf.ncols());
    let mut xi = DMatrix::zeros(n, m);
    for k in 0..n {
        for l in 0..n {
            // contract the h index first
            let mut gh = 0.0;
            for h in 0..n {
                gh += gamma.get(k, l, h) * ydot[h];
            }
            if gh == 0.0 {
                continue;
            }
            for j in 0..m {
                xi[(k, j)] += gh * jf[(l, j)];
            }
        }
    }
    xi
}

/// Evaluates the per-task quantities at a robot state. Forces, potential and
/// metric are evaluated at the task image `(f(p), Jf v)`.
pub fn task_quantities(task: &TaskSpec, state: &TangentState) -> Result<TaskAcceleration> {
    let (y, jf, ydot) = task.image(state)?;
    let jf_dot = task.map.jacobian_dot(&state.point, &state.velocity)?;
    let w_a = task.weight.matrix(&y, &ydot);

    let gamma = christoffel(task.metric.as_ref(), &y)?;
    let xi = xi_matrix(&gamma, &jf, &ydot);

    let force = task.force.force(&y, &ydot);
    let grad = task.potential.gradient(&y);
    let g_inv = invert_metric(&task.metric.matrix(&y))?;
    let accel = g_inv * (force - grad) - (&jf_dot + &xi) * &state.velocity;

    if !accel.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(format!("task `{}` acceleration", task.name)));
    }
    Ok(TaskAcceleration {
        jf,
        jf_dot,
        xi,
        accel,
        w_a,
    })
}

/// Assembles the normal equations from per-task quantities and solves them
/// with the pseudoinverse. Shared by the flat policy and the baselines.
pub(crate) fn fuse(m: usize, quantities: &[TaskAcceleration]) -> Result<PolicyOutput> {
    let mut mass = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    let mut active = 0usize;
    for q in quantities {
        if q.w_a.amax() == 0.0 {
            continue;
        }
        active += 1;
        let jt_w = q.jf.transpose() * &q.w_a;
        mass += &jt_w * &q.jf;
        rhs += jt_w * &q.accel;
    }

    if active == 0 {
        return Ok(PolicyOutput {
            acceleration: DVector::zeros(m),
            diagnostics: PolicyDiagnostics {
                mass_condition: f64::INFINITY,
                active_tasks: 0,
                all_weights_zero: true,
                residuals: vec![0.0; quantities.len()],
            },
        });
    }

    let acceleration = pseudo_inverse(&mass, PINV_REL_CUTOFF) * rhs;
    if !acceleration.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("fused acceleration".into()));
    }

    let residuals = quantities
        .iter()
        .map(|q| {
            let r = &q.jf * &acceleration - &q.accel;
            (r.transpose() * &q.w_a * r)[(0, 0)].max(0.0).sqrt()
        })
        .collect();

    let sv = mass.singular_values();
    let mass_condition = if sv.min() > 0.0 {
        (sv.max() / sv.min()).max(1.0)
    } else {
        f64::INFINITY
    };

    Ok(PolicyOutput {
        acceleration,
        diagnostics: PolicyDiagnostics {
            mass_condition,
            active_tasks: active,
            all_weights_zero: false,
            residuals,
        },
    })
}

/// The closed-form multi-task policy: pseudoinverse of the weighted mass
/// matrix applied to the weighted force sum. Zero-weight tasks contribute
/// nothing; an all-zero-weight state returns zero acceleration with a
/// diagnostic flag.
pub fn combine(tasks: &[TaskSpec], state: &TangentState) -> Result<PolicyOutput> {
    if tasks.is_empty() {
        return Err(Error::Unsupported("combine requires at least one task".into()));
    }
    let m = state.point.dim();
    let mut quantities = Vec::with_capacity(tasks.len());
    for task in tasks {
        // Skip the curvature work when the task is switched off; its
        // contribution to both sums is zero either way.
        let (y, jf, ydot) = task.image(state)?;
        let w_a = task.weight.matrix(&y, &ydot);
        if w_a.amax() == 0.0 {
            let (n, m_) = (jf.nrows(), jf.ncols());
            quantities.push(TaskAcceleration {
                jf,
                jf_dot: DMatrix::zeros(n, m_),
                xi: DMatrix::zeros(n, m_),
                accel: DVector::zeros(n),
                w_a,
            });
            continue;
        }
        quantities.push(task_quantities(task, state)?);
    }
    fuse(m, &quantities)
}

/// Numeric oracle for [`combine`]: minimizes the stacked weighted residual
/// `sum_i 1/2 |Jf_i a + Jfdot_i v - gammadd_i|^2_{w_i}` directly, building the
/// desired accelerations from the metric primitives rather than reusing
/// [`task_quantities`]. Returns the minimum-norm minimizer.
pub fn least_squares_oracle(tasks: &[TaskSpec], state: &TangentState) -> Result<DVector<f64>> {
    if tasks.is_empty() {
        return Err(Error::Unsupported("oracle requires at least one task".into()));
    }
    let m = state.point.dim();
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    for task in tasks {
        let (y, jf, ydot) = task.image(state)?;
        let w = task.weight.matrix(&y, &ydot);
        if w.amax() == 0.0 {
            continue;
        }
        let n = w.nrows();

        // gammadd^k = g^kj (F_j - dPhi_j) - Gamma^k_lh ydot^l ydot^h
        let g_inv = invert_metric(&task.metric.matrix(&y))?;
        let gamma = christoffel(task.metric.as_ref(), &y)?;
        let mut curve = DVector::zeros(n);
        for k in 0..n {
            let mut s = 0.0;
            for l in 0..n {
                for h in 0..n {
                    s += gamma.get(k, l, h) * ydot[l] * ydot[h];
                }
            }
            curve[k] = s;
        }
        let gammadd =
            g_inv * (task.force.force(&y, &ydot) - task.potential.gradient(&y)) - curve;

        // factor w = L^T L through its eigendecomposition
        let eig = w.symmetric_eigen();
        let mut l = DMatrix::zeros(n, n);
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 0.0 {
                let row = eig.eigenvectors.column(i).transpose() * lam.sqrt();
                l.row_mut(i).copy_from(&row);
            }
        }

        let jf_dot = task.map.jacobian_dot(&state.point, &state.velocity)?;
        let target = gammadd - jf_dot * &state.velocity;
        rows.push((&l * jf, l * target));
    }

    if rows.is_empty() {
        return Ok(DVector::zeros(m));
    }
    let total: usize = rows.iter().map(|(j, _)| j.nrows()).sum();
    let mut stacked = DMatrix::zeros(total, m);
    let mut rhs = DVector::zeros(total);
    let mut at = 0;
    for (j, b) in rows {
        stacked.rows_mut(at, j.nrows()).copy_from(&j);
        rhs.rows_mut(at, b.len()).copy_from(&b);
        at += j.nrows();
    }

    // minimum-norm least squares; the singular-value cutoff matches the
    // pseudoinverse convention on the normal equations (sigma(mass) =
    // sigma(stack)^2)
    let svd = stacked.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(m));
    }
    svd.solve(&rhs, PINV_REL_CUTOFF.sqrt() * smax)
        .map_err(|e| Error::Unsupported(e.to_string()))
}
