//! Temporal convergence study of the forward solution and of the discrete
//! adjoint against a time-refined run.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptivity::fit_slope;
use crate::adjoint::sweep_mu;
use crate::error::{Error, Result};
use crate::integrator::{GarkIntegrator, StageSolverConfig};
use crate::linalg::rel_err;
use crate::mesh::TimeGrid;
use crate::problems::ProblemInstance;
use crate::tableau::GarkTableau;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub steps: usize,
    pub forward_error: f64,
    pub adjoint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub reference_dt: f64,
    pub rows: Vec<ConvergenceRow>,
    /// `None` with fewer than two step sizes or vanishing errors.
    pub forward_order: Option<f64>,
    pub adjoint_order: Option<f64>,
}

/// Step sizes `base * 2^k` for `k = -levels..=0`, coarsest last.
pub fn halving_sequence(base: f64, levels: usize) -> Vec<f64> {
    (0..=levels).rev().map(|k| base / (1u64 << k) as f64).collect()
}

fn final_and_lambda0(integ: &GarkIntegrator, problem: &ProblemInstance, dt: f64) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let grid = TimeGrid::with_step(problem.t0, problem.tf, dt)?;
    let traj = integ.integrate(&problem.y0, &grid)?;
    let adj = sweep_mu(integ, &traj, problem.goal.as_ref())?;
    Ok((grid.num_steps(), traj.final_state().to_vec(), adj.lambda(0).to_vec()))
}

/// Relative l2 errors of `y_N` and `λ_0` for each `dt`, measured against a
/// run with `reference_dt`, and the least-squares slopes in `log2`.
pub fn convergence_study(
    problem: &ProblemInstance,
    tableau: &GarkTableau,
    solver: &StageSolverConfig,
    dts: &[f64],
    reference_dt: f64,
) -> Result<ConvergenceStudy> {
    if dts.is_empty() {
        return Err(Error::InvalidParameter("no step sizes".into()));
    }
    if let Some(dt) = dts.iter().find(|&&dt| dt <= reference_dt) {
        return Err(Error::InvalidParameter(format!("step {dt} not coarser than the reference step {reference_dt}")));
    }
    let integ = GarkIntegrator::new(Arc::clone(&problem.system), tableau.clone(), solver.clone())?;
    let (_, y_ref, l_ref) = final_and_lambda0(&integ, problem, reference_dt)?;
    let mut rows = Vec::with_capacity(dts.len());
    for &dt in dts {
        let (steps, y, l) = final_and_lambda0(&integ, problem, dt)?;
        let row = ConvergenceRow {
            dt,
            steps,
            forward_error: rel_err(&y, &y_ref),
            adjoint_error: rel_err(&l, &l_ref),
        };
        log::info!("dt {dt:e}: forward {:e}, adjoint {:e}", row.forward_error, row.adjoint_error);
        rows.push(row);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.dt.log2()).collect();
    let fe: Vec<f64> = rows.iter().map(|r| r.forward_error).collect();
    let ae: Vec<f64> = rows.iter().map(|r| r.adjoint_error).collect();
    let order = |e: &[f64]| if e.iter().any(|v| *v <= 0.0) { None } else { fit_slope(&x, e) };
    Ok(ConvergenceStudy {
        reference_dt,
        forward_order: order(&fe),
        adjoint_order: order(&ae),
        rows,
    })
}
