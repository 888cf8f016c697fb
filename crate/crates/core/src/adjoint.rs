//! Discrete adjoint of the GARK step, in three equivalent forms.
//!
//! With `J^{(q)}_i` the Jacobian of partition `q` at stage `i` of step `n`:
//!
//! * `θ`: `θ^{(q)}_i = h J^{(q)ᵀ}_i (b^{(q)}_i λ_{n+1} + Σ a^{m,q}_{j,i} θ^{(m)}_j)`,
//!   `λ_n = λ_{n+1} + Σ θ`.
//! * `μ`: `μ^{(q)}_i = h b^{(q)}_i λ_{n+1} + h Σ a^{m,q}_{j,i} J^{(m)ᵀ}_j μ^{(m)}_j`,
//!   `λ_n = λ_{n+1} + Σ J^ᵀ μ`.
//! * `ℓ`: `ℓ^{(q)}_i = J^{(q)ᵀ}_i Λ^{(q)}_i`, `Λ^{(q)}_i = λ_{n+1} + h Σ ā^{q,m}_{i,j} ℓ^{(m)}_j`,
//!   `λ_n = λ_{n+1} + h Σ b ℓ`.
//!
//! They are related by `θ = Jᵀμ = h b ℓ`. Stages are processed in the reverse
//! of the forward schedule.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{ForwardTrajectory, GarkIntegrator, StepRecord};
use crate::linalg::{axpy, CsrMatrix};
use crate::system::GoalFunction;
use crate::tableau::{AdjointTableau, StageId};

/// Per-stage adjoint values of one step, indexed `[partition][stage]`.
/// Families that were not computed are empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjointStepRecord {
    pub theta: Vec<Vec<Vec<f64>>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    pub ell: Vec<Vec<Vec<f64>>>,
    /// `Λ` of the `ℓ`-form, kept only on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_lambda: Option<Vec<Vec<Vec<f64>>>>,
}

/// Step adjoints `λ_0..λ_N` and per-step stage adjoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTrajectory {
    pub lambdas: Vec<Vec<f64>>,
    pub steps: Vec<AdjointStepRecord>,
}

impl AdjointTrajectory {
    pub fn lambda(&self, n: usize) -> &[f64] {
        &self.lambdas[n]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Which recursion a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointForm {
    Theta,
    Mu,
    Ell,
}

fn stage_jacobians(integ: &GarkIntegrator, rec: &StepRecord) -> Vec<Vec<Arc<CsrMatrix>>> {
    let sys = integ.system();
    (0..rec.stages.len())
        .map(|q| {
            (0..rec.stages[q].len())
                .map(|i| sys.jacobian(q, rec.stage_times[q][i], &rec.stages[q][i]))
                .collect()
        })
        .collect()
}

fn empty_like(rec: &StepRecord) -> Vec<Vec<Vec<f64>>> {
    rec.stages.iter().map(|s| vec![Vec::new(); s.len()]).collect()
}

/// Solves `(I − s Jᵀ) x = r`, or returns `r` when `s = 0`.
fn transposed_solve(integ: &GarkIntegrator, q: usize, s: f64, jac: &CsrMatrix, rhs: Vec<f64>) -> Result<Vec<f64>> {
    if s == 0.0 {
        return Ok(rhs);
    }
    let (op, shift) = integ.stage_operator(q, s, jac)?;
    let mut x = op.solve_transpose(&rhs)?;
    if shift != s {
        // one step of iterative refinement for the nearby cached shift
        let jt_x = jac.mul_vec_t(&x);
        let r: Vec<f64> = (0..x.len()).map(|k| rhs[k] - x[k] + s * jt_x[k]).collect();
        axpy(1.0, &op.solve_transpose(&r)?, &mut x);
    }
    Ok(x)
}

/// `θ`-form step: returns `λ_n` and `θ`.
pub fn adjoint_step_theta(
    integ: &GarkIntegrator,
    rec: &StepRecord,
    lambda_next: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let tab = integ.tableau();
    let jacs = stage_jacobians(integ, rec);
    let h = rec.h;
    let p = tab.num_partitions();
    let mut theta = empty_like(rec);
    for &s in tab.stage_schedule().iter().rev() {
        let (q, i) = (s.partition, s.stage);
        let mut w: Vec<f64> = lambda_next.iter().map(|l| tab.b(q, i) * l).collect();
        for m in 0..p {
            for j in 0..tab.stage_count(m) {
                let a = tab.a(m, q, j, i);
                if a != 0.0 && (m, j) != (q, i) {
                    axpy(a, &theta[m][j], &mut w);
                }
            }
        }
        let rhs: Vec<f64> = jacs[q][i].mul_vec_t(&w).iter().map(|v| h * v).collect();
        theta[q][i] = transposed_solve(integ, q, h * tab.diagonal(s), &jacs[q][i], rhs)?;
    }
    let mut lambda = lambda_next.to_vec();
    for th in theta.iter().flatten() {
        axpy(1.0, th, &mut lambda);
    }
    Ok((lambda, theta))
}

/// `μ`-form step: returns `λ_n` and `μ`.
pub fn adjoint_step_mu(
    integ: &GarkIntegrator,
    rec: &StepRecord,
    lambda_next: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let (lambda, mu, _) = mu_step(integ, rec, lambda_next)?;
    Ok((lambda, mu))
}

/// `μ`-form step that also returns `θ = Jᵀμ`.
fn mu_step(
    integ: &GarkIntegrator,
    rec: &StepRecord,
    lambda_next: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> {
    let tab = integ.tableau();
    let jacs = stage_jacobians(integ, rec);
    let h = rec.h;
    let p = tab.num_partitions();
    let mut mu = empty_like(rec);
    let mut jt_mu = empty_like(rec);
    for &s in tab.stage_schedule().iter().rev() {
        let (q, i) = (s.partition, s.stage);
        let mut rhs: Vec<f64> = lambda_next.iter().map(|l| h * tab.b(q, i) * l).collect();
        for m in 0..p {
            for j in 0..tab.stage_count(m) {
                let a = tab.a(m, q, j, i);
                if a != 0.0 && (m, j) != (q, i) {
                    axpy(h * a, &jt_mu[m][j], &mut rhs);
                }
            }
        }
        let v = transposed_solve(integ, q, h * tab.diagonal(s), &jacs[q][i], rhs)?;
        jt_mu[q][i] = jacs[q][i].mul_vec_t(&v);
        mu[q][i] = v;
    }
    let mut lambda = lambda_next.to_vec();
    for th in jt_mu.iter().flatten() {
        axpy(1.0, th, &mut lambda);
    }
    Ok((lambda, mu, jt_mu))
}

/// `ℓ`-form step with the transformed coefficients `adj`: returns `λ_n`, `ℓ`
/// and, if `keep_big_lambda`, the stage values `Λ`.
pub fn adjoint_step_ell(
    integ: &GarkIntegrator,
    adj: &AdjointTableau,
    rec: &StepRecord,
    lambda_next: &[f64],
    keep_big_lambda: bool,
) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>, Option<Vec<Vec<Vec<f64>>>>)> {
    let jacs = stage_jacobians(integ, rec);
    let h = rec.h;
    let p = adj.num_partitions();
    let mut ell = empty_like(rec);
    let mut big = keep_big_lambda.then(|| empty_like(rec));
    for &s in adj.stage_schedule() {
        let (q, i) = (s.partition, s.stage);
        let mut w = lambda_next.to_vec();
        for m in 0..p {
            for j in 0..adj.stage_count(m) {
                let a = adj.a_bar(q, m, i, j);
                if a != 0.0 && (m, j) != (q, i) {
                    axpy(h * a, &ell[m][j], &mut w);
                }
            }
        }
        let rhs = jacs[q][i].mul_vec_t(&w);
        let diag = adj.a_bar(q, q, i, i);
        let l = transposed_solve(integ, q, h * diag, &jacs[q][i], rhs)?;
        if let Some(b) = big.as_mut() {
            axpy(h * diag, &l, &mut w);
            b[q][i] = w;
        }
        ell[q][i] = l;
    }
    let mut lambda = lambda_next.to_vec();
    for q in 0..p {
        for i in 0..adj.stage_count(q) {
            axpy(h * adj.b_bar(q, i), &ell[q][i], &mut lambda);
        }
    }
    Ok((lambda, ell, big))
}

fn terminal(traj: &ForwardTrajectory, goal: &dyn GoalFunction) -> Result<Vec<f64>> {
    let l = goal.gradient(traj.final_state());
    if l.len() != traj.final_state().len() {
        return Err(Error::DimensionMismatch {
            expected: traj.final_state().len(),
            got: l.len(),
        });
    }
    Ok(l)
}

/// Reverse sweep along `traj` with `λ_N = Q_y(y_N)ᵀ`.
///
/// Runs the `μ` recursion and derives `θ = Jᵀμ` and, when all weights are
/// nonzero, `ℓ = θ / (h b)`.
pub fn sweep(integ: &GarkIntegrator, traj: &ForwardTrajectory, goal: &dyn GoalFunction) -> Result<AdjointTrajectory> {
    sweep_impl(integ, traj, goal, true)
}

/// Like [`sweep`] but keeps only `λ` and `μ`, the weights the error
/// estimates need.
pub fn sweep_mu(integ: &GarkIntegrator, traj: &ForwardTrajectory, goal: &dyn GoalFunction) -> Result<AdjointTrajectory> {
    sweep_impl(integ, traj, goal, false)
}

fn sweep_impl(
    integ: &GarkIntegrator,
    traj: &ForwardTrajectory,
    goal: &dyn GoalFunction,
    all_families: bool,
) -> Result<AdjointTrajectory> {
    let tab = integ.tableau();
    let n_steps = traj.steps.len();
    let mut lambdas = vec![Vec::new(); n_steps + 1];
    let mut steps = vec![AdjointStepRecord::default(); n_steps];
    lambdas[n_steps] = terminal(traj, goal)?;
    let nonzero_b = (0..tab.num_partitions()).all(|q| tab.weights(q).iter().all(|&b| b != 0.0));
    for n in (0..n_steps).rev() {
        let rec = &traj.steps[n];
        let (lambda, mu, theta) = mu_step(integ, rec, &lambdas[n + 1]).map_err(|e| e.at_step(n))?;
        let out = &mut steps[n];
        if all_families {
            if nonzero_b {
                out.ell = theta
                    .iter()
                    .enumerate()
                    .map(|(q, th)| {
                        th.iter()
                            .enumerate()
                            .map(|(i, v)| {
                                let s = 1.0 / (rec.h * tab.b(q, i));
                                v.iter().map(|x| s * x).collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            out.theta = theta;
        }
        out.mu = mu;
        lambdas[n] = lambda;
    }
    Ok(AdjointTrajectory { lambdas, steps })
}

/// Reverse sweep running only the recursion of `form`; the other families
/// stay empty. Used to cross-check the three forms.
pub fn sweep_with(
    integ: &GarkIntegrator,
    traj: &ForwardTrajectory,
    goal: &dyn GoalFunction,
    form: AdjointForm,
) -> Result<AdjointTrajectory> {
    let adj = match form {
        AdjointForm::Ell => Some(integ.tableau().adjoint_coefficients()?),
        _ => None,
    };
    let n_steps = traj.steps.len();
    let mut lambdas = vec![Vec::new(); n_steps + 1];
    let mut steps = vec![AdjointStepRecord::default(); n_steps];
    lambdas[n_steps] = terminal(traj, goal)?;
    for n in (0..n_steps).rev() {
        let rec = &traj.steps[n];
        let lam = &lambdas[n + 1];
        let lambda = match form {
            AdjointForm::Theta => {
                let (l, th) = adjoint_step_theta(integ, rec, lam).map_err(|e| e.at_step(n))?;
                steps[n].theta = th;
                l
            }
            AdjointForm::Mu => {
                let (l, mu) = adjoint_step_mu(integ, rec, lam).map_err(|e| e.at_step(n))?;
                steps[n].mu = mu;
                l
            }
            AdjointForm::Ell => {
                let (l, ell, big) =
                    adjoint_step_ell(integ, adj.as_ref().unwrap(), rec, lam, true).map_err(|e| e.at_step(n))?;
                steps[n].ell = ell;
                steps[n].big_lambda = big;
                l
            }
        };
        lambdas[n] = lambda;
    }
    Ok(AdjointTrajectory { lambdas, steps })
}

/// Order in which adjoint stages are evaluated.
pub fn adjoint_stage_order(integ: &GarkIntegrator) -> Vec<StageId> {
    integ.tableau().stage_schedule().iter().rev().copied().collect()
}
