//! Adjoint-weighted estimates of the temporal and spatial errors in the goal.
//!
//! With `λ`, `μ` computed along the numerical solution:
//!
//! * temporal: `E_1 = Σ_n λ_nᵀ r_n`, `r_n = ỹ(t_n) − ŷ_n`, where `ŷ_n` is one
//!   coarse step started from the reference value `ỹ(t_{n−1})`;
//! * spatial, per partition: `E_{1+q} = Σ_{n,i} μ^{(q)ᵀ}_{n,i} r^{(q)}_{n,i}`,
//!   `r = k̃ − f^{(q)}(T, Ỹ)`, with `k̃` the space-refined slopes injected into
//!   the coarse grid and `Ỹ = ỹ_n + h Σ a k̃`.
//!
//! Both estimate `Ψ_ref − Ψ_num`.

use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::adjoint::{sweep_mu, AdjointTrajectory};
use crate::error::{Error, Result};
use crate::integrator::{GarkIntegrator, StageSolverConfig};
use crate::linalg::{axpy, dot};
use crate::mesh::{GridTransfer, TensorGrid2D, TimeGrid};
use crate::problems::ProblemInstance;
use crate::tableau::GarkTableau;

/// `r_n` for `n = 1..N`, stored at index `n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalResiduals {
    pub residuals: Vec<Vec<f64>>,
}

/// `r^{(q)}_{n,i}`, indexed `[n][q][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialResiduals {
    pub residuals: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Space-refined solution injected into the coarse grid: step values
/// `ỹ_0..ỹ_N` and slopes `k̃` indexed `[n][q][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSolution {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub slopes: Vec<Vec<Vec<Vec<f64>>>>,
}

fn parallel_map<T, F>(n: usize, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = thread::available_parallelism().map_or(1, |p| p.get()).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Residuals of single coarse steps started from `reference[n − 1]`, where
/// `reference[n]` approximates the solution at `t_n`.
pub fn temporal_residuals(integ: &GarkIntegrator, grid: &TimeGrid, reference: &[Vec<f64>]) -> Result<TemporalResiduals> {
    if reference.len() != grid.nodes().len() {
        return Err(Error::TimeGridMismatch(format!(
            "{} reference states for {} time nodes",
            reference.len(),
            grid.nodes().len()
        )));
    }
    let residuals = parallel_map(grid.num_steps(), |n| {
        let (hat, _) = integ
            .step(grid.nodes()[n], grid.step(n), &reference[n])
            .map_err(|e| e.at_step(n))?;
        Ok(reference[n + 1].iter().zip(&hat).map(|(a, b)| a - b).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TemporalResiduals { residuals })
}

/// Values of a time-refined run at the nodes of `coarse`.
pub fn restrict_in_time(fine_states: &[Vec<f64>], fine: &TimeGrid, coarse: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    Ok(fine.embed(coarse)?.into_iter().map(|k| fine_states[k].clone()).collect())
}

/// Integrates on the fine grid over `grid`, injecting step values and slopes
/// into the coarse grid as it goes.
pub fn project_space_refined(
    fine: &GarkIntegrator,
    transfer: &GridTransfer,
    y0_fine: &[f64],
    grid: &TimeGrid,
) -> Result<ProjectedSolution> {
    let mut states = vec![transfer.project(y0_fine)];
    let mut slopes = Vec::with_capacity(grid.num_steps());
    fine.integrate_with(y0_fine, grid, |_, _, next, rec| {
        states.push(transfer.project(next));
        slopes.push(
            rec.slopes
                .iter()
                .map(|qs| qs.iter().map(|k| transfer.project(k)).collect())
                .collect(),
        );
        Ok(())
    })?;
    Ok(ProjectedSolution {
        grid: grid.clone(),
        states,
        slopes,
    })
}

/// Spatial residuals of the projected solution in the coarse stage equations
/// of `coarse`.
pub fn spatial_residuals(coarse: &GarkIntegrator, grid: &TimeGrid, projected: &ProjectedSolution) -> Result<SpatialResiduals> {
    if projected.grid != *grid {
        return Err(Error::TimeGridMismatch(
            "space-refined solution was computed on a different time grid".into(),
        ));
    }
    let tab = coarse.tableau();
    let sys = coarse.system();
    let p = tab.num_partitions();
    let residuals = parallel_map(grid.num_steps(), |n| {
        let (t, h) = (grid.nodes()[n], grid.step(n));
        let k = &projected.slopes[n];
        let mut out = Vec::with_capacity(p);
        for q in 0..p {
            let mut per_stage = Vec::with_capacity(tab.stage_count(q));
            for i in 0..tab.stage_count(q) {
                let mut arg = projected.states[n].clone();
                for m in 0..p {
                    for j in 0..tab.stage_count(m) {
                        let a = tab.a(q, m, i, j);
                        if a != 0.0 {
                            axpy(h * a, &k[m][j], &mut arg);
                        }
                    }
                }
                let ts = t + tab.stage_abscissa(crate::tableau::StageId::new(q, i)) * h;
                let f = sys.eval_vec(q, ts, &arg);
                per_stage.push(k[q][i].iter().zip(&f).map(|(a, b)| a - b).collect());
            }
            out.push(per_stage);
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SpatialResiduals { residuals })
}

/// Goal values and estimates with their localizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub psi_num: f64,
    pub psi_ref: Option<f64>,
    /// `Ψ_ref − Ψ_num`
    pub e_ref: Option<f64>,
    /// `E_1`
    pub e_time: f64,
    /// `E_{1+q}` per partition.
    pub e_space: Vec<f64>,
    pub partition_names: Vec<String>,
    pub e_total: f64,
    /// `(E − E_ref) / E_ref`
    pub accuracy: Option<f64>,
    /// `λ_{n+1}ᵀ r_{n+1}` for every interval `n`.
    pub step_map: Vec<f64>,
    /// Number of cells in x and y.
    pub cells: (usize, usize),
    /// Per partition, per-cell spatial contributions (x index fastest).
    pub cell_maps: Vec<Vec<f64>>,
}

impl ErrorReport {
    /// Sum of the per-partition cell maps.
    pub fn total_cell_map(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cells.0 * self.cells.1];
        for m in &self.cell_maps {
            axpy(1.0, m, &mut out);
        }
        out
    }
}

/// Spreads nodal values evenly over the cells sharing each node.
pub fn nodes_to_cells(grid: &TensorGrid2D, nodal: &[f64]) -> Vec<f64> {
    let (cx, _) = grid.cells();
    let mut out = vec![0.0; grid.num_cells()];
    for (k, (i, j)) in grid.unknown_nodes().into_iter().enumerate() {
        let cells = grid.cells_of_node(i, j);
        let share = nodal[k] / cells.len() as f64;
        for (ci, cj) in cells {
            out[cj * cx + ci] += share;
        }
    }
    out
}

/// Combines adjoint weights and residuals into a report.
///
/// `psi_ref` is the goal on the reference solution, if one was computed.
pub fn assemble_report(
    grid: &TensorGrid2D,
    partition_names: Vec<String>,
    adjoint: &AdjointTrajectory,
    temporal: &TemporalResiduals,
    spatial: &SpatialResiduals,
    psi_num: f64,
    psi_ref: Option<f64>,
) -> Result<ErrorReport> {
    let n_steps = adjoint.lambdas.len() - 1;
    if temporal.residuals.len() != n_steps || spatial.residuals.len() != n_steps {
        return Err(Error::TimeGridMismatch(format!(
            "{n_steps} adjoint steps, {} temporal and {} spatial residual steps",
            temporal.residuals.len(),
            spatial.residuals.len()
        )));
    }
    let step_map: Vec<f64> = (0..n_steps)
        .map(|n| dot(&adjoint.lambdas[n + 1], &temporal.residuals[n]))
        .collect();
    let e_time: f64 = step_map.iter().sum();

    let nodes = grid.num_unknowns();
    let p = partition_names.len();
    let mut nodal = vec![vec![0.0; nodes]; p];
    for n in 0..n_steps {
        for (q, node_sum) in nodal.iter_mut().enumerate() {
            for (mu, r) in adjoint.steps[n].mu[q].iter().zip(&spatial.residuals[n][q]) {
                for (k, (a, b)) in mu.iter().zip(r).enumerate() {
                    node_sum[k % nodes] += a * b;
                }
            }
        }
    }
    let e_space: Vec<f64> = nodal.iter().map(|v| v.iter().sum()).collect();
    let cell_maps = nodal.iter().map(|v| nodes_to_cells(grid, v)).collect();
    let e_total = e_time + e_space.iter().sum::<f64>();
    let e_ref = psi_ref.map(|r| r - psi_num);
    Ok(ErrorReport {
        psi_num,
        psi_ref,
        e_ref,
        e_time,
        e_space,
        partition_names,
        e_total,
        accuracy: e_ref.map(|e| (e_total - e) / e),
        step_map,
        cells: grid.cells(),
        cell_maps,
    })
}

/// The four solutions of one estimate and the resulting report.
pub struct Estimate {
    pub report: ErrorReport,
    pub numerical_final: Vec<f64>,
    pub reference_final: Vec<f64>,
    pub adjoint_initial: Vec<f64>,
}

/// Storage for final reference states, keyed by [`reference_key`].
pub trait ReferenceCache: Sync {
    fn load(&self, key: &str) -> Option<Vec<f64>>;
    fn store(&self, key: &str, state: &[f64]);
}

#[derive(Serialize)]
struct ReferenceKey<'a> {
    problem: &'a crate::problems::ProblemSpec,
    grid: &'a TensorGrid2D,
    time: &'a TimeGrid,
    tableau: &'a GarkTableau,
    solver: &'a StageSolverConfig,
}

/// Canonical JSON naming everything the reference solve depends on.
pub fn reference_key(
    reference: &ProblemInstance,
    time: &TimeGrid,
    tableau: &GarkTableau,
    cfg: &StageSolverConfig,
) -> Result<String> {
    crate::io::to_json(&ReferenceKey {
        problem: &reference.spec,
        grid: &reference.grid,
        time,
        tableau,
        solver: cfg,
    })
}

/// Numerical solution on `(grid, time)`, time-refined on `(grid, time/2)`,
/// space-refined on `(2·grid, time)` and reference on `(2·grid, time/2)`,
/// followed by the adjoint sweep and the report.
pub fn run_estimate(
    problem: &ProblemInstance,
    tableau: &GarkTableau,
    cfg: &StageSolverConfig,
    time: &TimeGrid,
) -> Result<Estimate> {
    run_estimate_cached(problem, tableau, cfg, time, None)
}

/// As [`run_estimate`], taking the reference from `cache` when present and
/// storing it otherwise.
pub fn run_estimate_cached(
    problem: &ProblemInstance,
    tableau: &GarkTableau,
    cfg: &StageSolverConfig,
    time: &TimeGrid,
    cache: Option<&dyn ReferenceCache>,
) -> Result<Estimate> {
    let fine_grid = problem.grid.refine_uniform();
    let fine_problem = problem.on_grid(&fine_grid)?;
    let fine_time = time.halve_all_steps();
    let transfer = GridTransfer::new(&problem.grid, &fine_grid)?;
    let key = match cache {
        Some(_) => Some(reference_key(&fine_problem, &fine_time, tableau, cfg)?),
        None => None,
    };
    let cached = cache.zip(key.as_deref()).and_then(|(c, k)| c.load(k));
    let cached = cached.filter(|y| y.len() == fine_problem.system.dim());

    let coarse = Arc::new(GarkIntegrator::new(problem.system.clone(), tableau.clone(), cfg.clone())?);
    let fine = Arc::new(GarkIntegrator::new(fine_problem.system.clone(), tableau.clone(), cfg.clone())?);

    let (numerical, time_refined, space_refined, reference) = thread::scope(|s| {
        let numerical = s.spawn(|| -> Result<_> {
            let traj = coarse.integrate(&problem.y0, time)?;
            let adj = sweep_mu(&coarse, &traj, problem.goal.as_ref())?;
            Ok((traj, adj))
        });
        let time_refined = s.spawn(|| coarse.integrate_states(&problem.y0, &fine_time));
        let space_refined = s.spawn(|| project_space_refined(&fine, &transfer, &fine_problem.y0, time));
        let reference = s.spawn(|| match &cached {
            Some(y) => Ok(y.clone()),
            None => fine.integrate_final(&fine_problem.y0, &fine_time),
        });
        (
            numerical.join().expect("numerical solve panicked"),
            time_refined.join().expect("time-refined solve panicked"),
            space_refined.join().expect("space-refined solve panicked"),
            reference.join().expect("reference solve panicked"),
        )
    });
    let (traj, adj) = numerical?;
    let time_refined = restrict_in_time(&time_refined?, &fine_time, time)?;
    let space_refined = space_refined?;
    let reference = reference?;
    if let (Some(c), Some(k), None) = (cache, key.as_deref(), &cached) {
        c.store(k, &reference);
    }

    let temporal = temporal_residuals(&coarse, time, &time_refined)?;
    let spatial = spatial_residuals(&coarse, time, &space_refined)?;
    let names = (0..problem.system.num_partitions())
        .map(|q| problem.system.partition_name(q))
        .collect();
    let psi_num = problem.goal.value(traj.final_state());
    let psi_ref = fine_problem.goal.value(&reference);
    let report = assemble_report(&problem.grid, names, &adj, &temporal, &spatial, psi_num, Some(psi_ref))?;
    Ok(Estimate {
        report,
        numerical_final: traj.final_state().to_vec(),
        reference_final: reference,
        adjoint_initial: adj.lambdas[0].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::sweep;
    use crate::linalg::{norm_inf, CsrMatrix};
    use crate::mesh::{BoundaryCondition, EdgeConditions};
    use crate::problems::{imex_for_problems, ProblemSpec};
    use crate::system::{LinearGoal, LinearSplitSystem, PointReaction, ReactionDiffusion, SplitSystem, ZeroSystem};
    use crate::tableau::{default_gamma, default_imex22};

    fn coarse_integ(sys: impl SplitSystem + 'static) -> GarkIntegrator {
        GarkIntegrator::new(Arc::new(sys), default_imex22(), StageSolverConfig::default()).unwrap()
    }

    #[test]
    fn zero_rhs_has_zero_temporal_residuals() {
        let it = coarse_integ(ZeroSystem::new(3, 2));
        let g = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let reference = vec![vec![1.0, 2.0, 3.0]; 5];
        let r = temporal_residuals(&it, &g, &reference).unwrap();
        assert!(r.residuals.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn explicit_scalar_residual_leading_term() {
        let mu = -1.0;
        let it = coarse_integ(LinearSplitSystem::scalar(mu, 0, 2));
        for h in [0.1, 0.05] {
            let g = TimeGrid::uniform(0.0, h, 1).unwrap();
            let y0: f64 = 1.0;
            let reference = vec![vec![y0], vec![(mu * h).exp() * y0]];
            let r = temporal_residuals(&it, &g, &reference).unwrap().residuals[0][0];
            let z = mu * h;
            let exact = (z.exp() - 1.0 - z - z * z / 2.0) * y0;
            assert!((r - exact).abs() < 1e-15);
            assert!((r / (z * z * z / 6.0) - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn spatial_residuals_vanish_for_identical_inputs() {
        let spec = ProblemSpec::Bsvd;
        let grid = spec.grid(6, 6).unwrap();
        let p = spec.instantiate(&grid, 0.0, 0.2).unwrap();
        let tab = imex_for_problems(default_gamma(), default_gamma()).unwrap();
        let it = GarkIntegrator::new(p.system.clone(), tab, StageSolverConfig::default()).unwrap();
        let g = TimeGrid::uniform(0.0, 0.2, 4).unwrap();
        let proj = project_space_refined(&it, &GridTransfer::identity(&grid), &p.y0, &g).unwrap();
        let r = spatial_residuals(&it, &g, &proj).unwrap();
        let scale = proj.slopes.iter().flatten().flatten().map(|k| norm_inf(k)).fold(0.0, f64::max);
        let worst = r.residuals.iter().flatten().flatten().map(|v| norm_inf(v)).fold(0.0, f64::max);
        assert!(worst <= 1e-12 * scale, "{worst} vs {scale}");
        // the explicit reaction stages reproduce bit for bit
        for n in 0..4 {
            for i in 0..2 {
                assert!(r.residuals[n][1][i].iter().all(|&v| v == 0.0));
            }
        }
    }

    struct Decay;
    impl PointReaction for Decay {
        fn species(&self) -> usize {
            1
        }
        fn is_linear(&self) -> bool {
            true
        }
        fn eval(&self, _t: f64, x: f64, _y: f64, u: &[f64], out: &mut [f64]) {
            out[0] = -(1.0 + x) * u[0];
        }
        fn jacobian(&self, _t: f64, x: f64, _y: f64, _u: &[f64], out: &mut [f64]) {
            out[0] = -(1.0 + x);
        }
    }

    #[test]
    fn pure_reaction_residuals_vanish_under_injection() {
        let bc = EdgeConditions::all(BoundaryCondition::NeumannZero);
        let coarse_grid = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 4, 4, bc).unwrap();
        let fine_grid = coarse_grid.refine_uniform();
        let make = |g: &TensorGrid2D| {
            let n = g.num_unknowns();
            ReactionDiffusion::new(g, CsrMatrix::zeros(n, n), Box::new(Decay))
        };
        let tab = imex_for_problems(default_gamma(), default_gamma()).unwrap();
        let c = GarkIntegrator::new(Arc::new(make(&coarse_grid)), tab.clone(), StageSolverConfig::default()).unwrap();
        let f = GarkIntegrator::new(Arc::new(make(&fine_grid)), tab, StageSolverConfig::default()).unwrap();
        let y0: Vec<f64> = fine_grid.unknown_coordinates().iter().map(|(x, y)| 1.0 + x * y).collect();
        let g = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let transfer = GridTransfer::new(&coarse_grid, &fine_grid).unwrap();
        let proj = project_space_refined(&f, &transfer, &y0, &g).unwrap();
        let r = spatial_residuals(&c, &g, &proj).unwrap();
        assert!(r.residuals.iter().flatten().flatten().all(|v| norm_inf(v) <= 1e-8));
    }

    #[test]
    fn time_grid_mismatch_is_rejected() {
        let it = coarse_integ(ZeroSystem::new(2, 2));
        let g = TimeGrid::uniform(0.0, 1.0, 2).unwrap();
        let proj = ProjectedSolution {
            grid: TimeGrid::uniform(0.0, 1.0, 3).unwrap(),
            states: vec![vec![0.0; 2]; 4],
            slopes: vec![vec![vec![vec![0.0; 2]; 2]; 2]; 3],
        };
        assert!(matches!(spatial_residuals(&it, &g, &proj), Err(Error::TimeGridMismatch(_))));
    }

    fn toy_report(scale: f64, unit: Option<(usize, usize)>) -> (ErrorReport, AdjointTrajectory) {
        let bc = EdgeConditions::all(BoundaryCondition::NeumannZero);
        let grid = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 3, 2, bc).unwrap();
        let d = grid.num_unknowns();
        let sys = LinearSplitSystem::random(5, d, 2);
        let it = coarse_integ(sys);
        let tg = TimeGrid::uniform(0.0, 0.5, 3).unwrap();
        let y0: Vec<f64> = (0..d).map(|k| (k as f64).sin()).collect();
        let tr = it.integrate(&y0, &tg).unwrap();
        let goal = LinearGoal::integral(&grid, 1, &[0]);
        let adj = sweep(&it, &tr, &goal).unwrap();
        let mut temporal = TemporalResiduals {
            residuals: (0..3).map(|n| (0..d).map(|k| scale * ((n * d + k) as f64 * 0.37).cos()).collect()).collect(),
        };
        let mut spatial = SpatialResiduals {
            residuals: (0..3)
                .map(|n| {
                    (0..2)
                        .map(|q| (0..2).map(|i| (0..d).map(|k| scale * ((n + 3 * q + 7 * i + k) as f64).sin()).collect()).collect())
                        .collect()
                })
                .collect(),
        };
        if let Some((n, j)) = unit {
            temporal.residuals.iter_mut().flatten().for_each(|v| *v = 0.0);
            spatial.residuals.iter_mut().flatten().flatten().flatten().for_each(|v| *v = 0.0);
            temporal.residuals[n - 1][j] = 1.0;
        }
        let r = assemble_report(&grid, vec!["a".into(), "b".into()], &adj, &temporal, &spatial, 1.0, Some(1.5)).unwrap();
        (r, adj)
    }

    #[test]
    fn localization_sums_to_totals() {
        let (r, _) = toy_report(1.0, None);
        let steps: f64 = r.step_map.iter().sum();
        assert_eq!(steps, r.e_time);
        for (q, m) in r.cell_maps.iter().enumerate() {
            let s: f64 = m.iter().sum();
            assert!((s - r.e_space[q]).abs() <= 1e-12 * r.e_space[q].abs().max(1e-300));
        }
        assert_eq!(r.e_total, r.e_time + r.e_space.iter().sum::<f64>());
        assert_eq!(r.e_ref, Some(0.5));
    }

    #[test]
    fn pairing_is_linear() {
        let (a, _) = toy_report(1.0, None);
        let (b, _) = toy_report(2.0, None);
        assert_eq!(b.e_time, 2.0 * a.e_time);
        for q in 0..2 {
            assert_eq!(b.e_space[q], 2.0 * a.e_space[q]);
        }
    }

    #[test]
    fn unit_residual_picks_one_adjoint_component() {
        let (r, adj) = toy_report(1.0, Some((2, 3)));
        assert_eq!(r.e_time, adj.lambdas[2][3]);
        assert_eq!(r.e_space, vec![0.0, 0.0]);
        assert!(r.total_cell_map().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nodes_to_cells_preserves_sum() {
        let bc = EdgeConditions::all(BoundaryCondition::DirichletZero);
        let grid = TensorGrid2D::uniform((0.0, 1.0), (0.0, 1.0), 4, 3, bc).unwrap();
        let nodal: Vec<f64> = (0..grid.num_unknowns()).map(|k| k as f64 + 1.0).collect();
        let cells = nodes_to_cells(&grid, &nodal);
        assert_eq!(cells.len(), 12);
        assert!((cells.iter().sum::<f64>() - nodal.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn single_step_pipeline() {
        let spec = ProblemSpec::Bsvd;
        let grid = spec.grid(4, 4).unwrap();
        let p = spec.instantiate(&grid, 0.0, 0.05).unwrap();
        let tab = imex_for_problems(default_gamma(), default_gamma()).unwrap();
        let est = run_estimate(&p, &tab, &StageSolverConfig::default(), &TimeGrid::uniform(0.0, 0.05, 1).unwrap()).unwrap();
        assert_eq!(est.report.step_map.len(), 1);
        assert_eq!(est.report.step_map[0], est.report.e_time);
        assert!(est.report.e_ref.is_some());
    }
}
