//! Dense reference computations for small systems: one-step linearizations,
//! finite-difference sensitivities and chained sensitivity matrices.
//!
//! Nothing here goes through the production stepper or adjoint sweep. Stage
//! equations are solved as one coupled dense system, to near machine
//! precision so that difference quotients are not polluted by solver
//! tolerances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrator::StepRecord;
use crate::mesh::TimeGrid;
use crate::system::{GoalFunction, SplitSystem};
use crate::tableau::{GarkTableau, StageId};

/// Largest dimension the dense oracles accept.
pub const DENSE_CAP: usize = 64;

fn check_dim(d: usize) -> Result<()> {
    if d > DENSE_CAP {
        Err(Error::OracleTooLarge { dim: d, cap: DENSE_CAP })
    } else {
        Ok(())
    }
}

/// All stages `(q, i)` in partition-major order, with the flat coefficient
/// matrix and weights over that ordering.
struct Flat {
    stages: Vec<StageId>,
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

fn flatten(tab: &GarkTableau) -> Flat {
    let stages: Vec<StageId> = (0..tab.num_partitions())
        .flat_map(|q| (0..tab.stage_count(q)).map(move |i| StageId::new(q, i)))
        .collect();
    let s = stages.len();
    let a = DMatrix::from_fn(s, s, |r, c| {
        let (x, y) = (stages[r], stages[c]);
        tab.a(x.partition, y.partition, x.stage, y.stage)
    });
    let b = stages.iter().map(|s| tab.b(s.partition, s.stage)).collect();
    let c = stages.iter().map(|&s| tab.stage_abscissa(s)).collect();
    Flat { stages, a, b, c }
}

fn dense_jacobian(sys: &dyn SplitSystem, q: usize, t: f64, y: &[f64]) -> DMatrix<f64> {
    let j = sys.jacobian(q, t, y);
    let d = sys.dim();
    let mut m = DMatrix::zeros(d, d);
    for (r, c, v) in j.triplets() {
        m[(r, c)] += v;
    }
    m
}

/// One step computed by solving the coupled slope equations
/// `K_s = f^{(q_s)}(T_s, y + h Σ_t a_{st} K_t)` with dense Newton.
/// Returns `y_{n+1}` and the stage values, indexed `[partition][stage]`.
pub fn dense_step(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    t: f64,
    h: f64,
    y: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let d = sys.dim();
    check_dim(d)?;
    let fl = flatten(tab);
    let s = fl.stages.len();
    let yv = DVector::from_column_slice(y);
    let mut k = DVector::zeros(s * d);
    for (r, st) in fl.stages.iter().enumerate() {
        let f = sys.eval_vec(st.partition, t + fl.c[r] * h, y);
        k.rows_mut(r * d, d).copy_from_slice(&f);
    }
    let stage_value = |k: &DVector<f64>, r: usize| -> DVector<f64> {
        let mut v = yv.clone();
        for c in 0..s {
            if fl.a[(r, c)] != 0.0 {
                v += h * fl.a[(r, c)] * k.rows(c * d, d);
            }
        }
        v
    };
    let mut previous = f64::INFINITY;
    for _ in 0..60 {
        let values: Vec<DVector<f64>> = (0..s).map(|r| stage_value(&k, r)).collect();
        let mut g = DVector::zeros(s * d);
        let mut jac = DMatrix::<f64>::identity(s * d, s * d);
        for (r, st) in fl.stages.iter().enumerate() {
            let ts = t + fl.c[r] * h;
            let f = sys.eval_vec(st.partition, ts, values[r].as_slice());
            for e in 0..d {
                g[r * d + e] = k[r * d + e] - f[e];
            }
            let jr = dense_jacobian(sys, st.partition, ts, values[r].as_slice());
            for c in 0..s {
                if fl.a[(r, c)] != 0.0 {
                    let block = -h * fl.a[(r, c)] * &jr;
                    let mut view = jac.view_mut((r * d, c * d), (d, d));
                    view += block;
                }
            }
        }
        let lu = jac.lu();
        let dk = lu.solve(&g).ok_or(Error::SingularMatrix(0))?;
        k -= &dk;
        let size = dk.amax();
        let scale = 1.0 + k.amax();
        // stop once updates hit round-off or stop shrinking
        if size <= 4.0 * f64::EPSILON * scale || (size >= previous && size <= 1e-12 * scale) {
            break;
        }
        previous = size;
    }
    let mut out = yv.clone();
    for r in 0..s {
        out += h * fl.b[r] * k.rows(r * d, d);
    }
    let mut stages: Vec<Vec<Vec<f64>>> = (0..tab.num_partitions())
        .map(|q| vec![Vec::new(); tab.stage_count(q)])
        .collect();
    for (r, st) in fl.stages.iter().enumerate() {
        stages[st.partition][st.stage] = stage_value(&k, r).as_slice().to_vec();
    }
    Ok((out.as_slice().to_vec(), stages))
}

/// Tangent-linear propagator `Φ = ∂y_{n+1}/∂y_n` at given stage values:
/// `Φ = I + h (bᵀ ⊗ I) (I − h J (A ⊗ I))⁻¹ J (1 ⊗ I)` with `J` the
/// block-diagonal stage Jacobian.
pub fn propagator_at_stages(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    t: f64,
    h: f64,
    stages: &[Vec<Vec<f64>>],
) -> Result<DMatrix<f64>> {
    let d = sys.dim();
    check_dim(d)?;
    let fl = flatten(tab);
    let s = fl.stages.len();
    let jacs: Vec<DMatrix<f64>> = fl
        .stages
        .iter()
        .enumerate()
        .map(|(r, st)| dense_jacobian(sys, st.partition, t + fl.c[r] * h, &stages[st.partition][st.stage]))
        .collect();
    let mut m = DMatrix::<f64>::identity(s * d, s * d);
    let mut rhs = DMatrix::<f64>::zeros(s * d, d);
    for r in 0..s {
        for c in 0..s {
            if fl.a[(r, c)] != 0.0 {
                let mut view = m.view_mut((r * d, c * d), (d, d));
                view -= h * fl.a[(r, c)] * &jacs[r];
            }
        }
        rhs.view_mut((r * d, 0), (d, d)).copy_from(&jacs[r]);
    }
    let dk = m.lu().solve(&rhs).ok_or(Error::SingularMatrix(0))?;
    let mut phi = DMatrix::<f64>::identity(d, d);
    for r in 0..s {
        phi += h * fl.b[r] * dk.rows(r * d, d);
    }
    Ok(phi)
}

/// `Φ` at stage values recorded by the production stepper.
pub fn propagator_for_record(sys: &dyn SplitSystem, tab: &GarkTableau, rec: &StepRecord) -> Result<DMatrix<f64>> {
    propagator_at_stages(sys, tab, rec.t, rec.h, &rec.stages)
}

/// `Φ = ∂y_{n+1}/∂y_n` for the step from `(t, y)`, with stages from
/// [`dense_step`].
pub fn dense_step_propagator(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    t: f64,
    h: f64,
    y: &[f64],
) -> Result<DMatrix<f64>> {
    let (_, stages) = dense_step(sys, tab, t, h, y)?;
    propagator_at_stages(sys, tab, t, h, &stages)
}

/// Dense trajectory `y_0..y_N`.
pub fn dense_trajectory(sys: &dyn SplitSystem, tab: &GarkTableau, grid: &TimeGrid, y0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![y0.to_vec()];
    for n in 0..grid.num_steps() {
        let (next, _) = dense_step(sys, tab, grid.nodes()[n], grid.step(n), &out[n])?;
        out.push(next);
    }
    Ok(out)
}

fn final_from(sys: &dyn SplitSystem, tab: &GarkTableau, grid: &TimeGrid, n: usize, y: Vec<f64>) -> Result<Vec<f64>> {
    let mut y = y;
    for m in n..grid.num_steps() {
        y = dense_step(sys, tab, grid.nodes()[m], grid.step(m), &y)?.0;
    }
    Ok(y)
}

/// Central difference of `Q(y_N)` with respect to component `j` of `y_n`,
/// re-integrating from step `n`; `y_n` comes from a dense run from `y0`.
#[allow(clippy::too_many_arguments)]
pub fn fd_sensitivity(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    grid: &TimeGrid,
    y0: &[f64],
    goal: &dyn GoalFunction,
    n: usize,
    j: usize,
    eps: f64,
) -> Result<f64> {
    check_dim(sys.dim())?;
    let mut yn = y0.to_vec();
    for m in 0..n {
        yn = dense_step(sys, tab, grid.nodes()[m], grid.step(m), &yn)?.0;
    }
    fd_sensitivity_at(sys, tab, grid, &yn, goal, n, j, eps)
}

/// As [`fd_sensitivity`] with `y_n` given.
#[allow(clippy::too_many_arguments)]
pub fn fd_sensitivity_at(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    grid: &TimeGrid,
    yn: &[f64],
    goal: &dyn GoalFunction,
    n: usize,
    j: usize,
    eps: f64,
) -> Result<f64> {
    let mut plus = yn.to_vec();
    let mut minus = yn.to_vec();
    plus[j] += eps;
    minus[j] -= eps;
    let qp = goal.value(&final_from(sys, tab, grid, n, plus)?);
    let qm = goal.value(&final_from(sys, tab, grid, n, minus)?);
    Ok((qp - qm) / (2.0 * eps))
}

/// `S = ∂y_{n2}/∂y_{n1}` as the product of dense step propagators along the
/// dense trajectory from `y0`.
pub fn numerical_sensitivity_matrix(
    sys: &dyn SplitSystem,
    tab: &GarkTableau,
    grid: &TimeGrid,
    y0: &[f64],
    n1: usize,
    n2: usize,
) -> Result<DMatrix<f64>> {
    let d = sys.dim();
    check_dim(d)?;
    if n1 > n2 || n2 > grid.num_steps() {
        return Err(Error::InvalidParameter(format!("step range {n1}..{n2} invalid")));
    }
    let mut y = y0.to_vec();
    for m in 0..n1 {
        y = dense_step(sys, tab, grid.nodes()[m], grid.step(m), &y)?.0;
    }
    let mut s = DMatrix::<f64>::identity(d, d);
    for m in n1..n2 {
        let (next, stages) = dense_step(sys, tab, grid.nodes()[m], grid.step(m), &y)?;
        s = propagator_at_stages(sys, tab, grid.nodes()[m], grid.step(m), &stages)? * s;
        y = next;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{GarkIntegrator, StageSolverConfig};
    use crate::linalg::rel_err;
    use crate::system::{LinearGoal, LinearSplitSystem, RandomSplitSystem, ZeroSystem};
    use crate::tableau::default_imex22;
    use std::sync::Arc;

    #[test]
    fn zero_jacobians_give_identity() {
        let phi = dense_step_propagator(&ZeroSystem::new(3, 2), &default_imex22(), 0.0, 0.1, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(phi, DMatrix::identity(3, 3));
    }

    #[test]
    fn explicit_scalar_propagator() {
        let sys = LinearSplitSystem::scalar(-2.0, 0, 2);
        let phi = dense_step_propagator(&sys, &default_imex22(), 0.0, 0.3, &[1.0]).unwrap();
        let z: f64 = -0.6;
        assert!((phi[(0, 0)] - (1.0 + z + z * z / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn dense_step_matches_production_step() {
        let tab = default_imex22();
        for seed in 0..3 {
            let sys = RandomSplitSystem::new(seed, 5, 2);
            let y = RandomSplitSystem::initial_state(seed, 5);
            let (a, _) = dense_step(&sys, &tab, 0.2, 0.1, &y).unwrap();
            let it = GarkIntegrator::new(Arc::new(sys), tab.clone(), StageSolverConfig::default()).unwrap();
            let (b, _) = it.step(0.2, 0.1, &y).unwrap();
            assert!(rel_err(&a, &b) < 1e-9);
        }
    }

    #[test]
    fn fd_matches_linear_goal_exactly_for_linear_systems() {
        let sys = LinearSplitSystem::random(2, 3, 2);
        let tab = default_imex22();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let goal = LinearGoal::new(vec![1.0, 2.0, -1.0]);
        let y0 = [0.5, -0.5, 1.0];
        let s = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 2, 5).unwrap();
        let lam = s.transpose() * DVector::from_column_slice(goal.weights());
        for j in 0..3 {
            let fd = fd_sensitivity(&sys, &tab, &grid, &y0, &goal, 2, j, 1e-6).unwrap();
            assert!((fd - lam[j]).abs() < 1e-8 * (1.0 + lam[j].abs()));
        }
    }

    #[test]
    fn sensitivity_matrix_chain_property() {
        let sys = RandomSplitSystem::new(4, 4, 2);
        let tab = default_imex22();
        let grid = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
        let y0 = RandomSplitSystem::initial_state(4, 4);
        let id = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 3, 3).unwrap();
        assert_eq!(id, DMatrix::identity(4, 4));
        let s31 = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 1, 5).unwrap();
        let s21 = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 1, 3).unwrap();
        let s32 = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 3, 5).unwrap();
        assert!((s31 - s32 * s21).amax() < 1e-12);
    }

    #[test]
    fn fd_error_curve_is_v_shaped() {
        let sys = RandomSplitSystem::new(6, 4, 2);
        let tab = default_imex22();
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let y0 = RandomSplitSystem::initial_state(6, 4);
        let goal = crate::system::QuadraticGoal::new(vec![1.0; 4]);
        let traj = dense_trajectory(&sys, &tab, &grid, &y0).unwrap();
        let s = numerical_sensitivity_matrix(&sys, &tab, &grid, &y0, 0, 5).unwrap();
        let lam = s.transpose() * DVector::from_column_slice(&goal.gradient(&traj[5]));
        let errs: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8, 1e-11]
            .iter()
            .map(|&e| {
                let fd = fd_sensitivity_at(&sys, &tab, &grid, &y0, &goal, 0, 1, e).unwrap();
                (fd - lam[1]).abs() / lam[1].abs()
            })
            .collect();
        let min = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < 1e-6, "{errs:?}");
        assert!(errs[0] > min && errs[4] > min, "{errs:?}");
    }

    #[test]
    fn cap_is_enforced() {
        let sys = ZeroSystem::new(65, 2);
        assert!(matches!(
            dense_step_propagator(&sys, &default_imex22(), 0.0, 0.1, &vec![0.0; 65]),
            Err(Error::OracleTooLarge { dim: 65, cap: 64 })
        ));
    }
}
